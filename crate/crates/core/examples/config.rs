//! Resolves a run configuration from a file layer, environment overrides and
//! flags, then prints the effective TOML.
//!
//! ```text
//! cargo run --release --example config
//! ```

use sequnlearn::config::{resolve_with, Overrides, Preset};

fn main() -> sequnlearn::Result<()> {
    let file = r#"
        [phases.negative]
        alpha = 0.1
    "#;
    let env = [
        ("SEQUNLEARN_PHASES__STABILIZE__LR".to_string(), "5e-5".to_string()),
        ("SEQUNLEARN_EVAL__MAX_NEW".to_string(), "32".to_string()),
    ];
    let flags = Overrides {
        preset: Some(Preset::Desk),
        seed: Some(7),
        workdir: None,
    };
    let cfg = resolve_with(Some(file), env, &flags)?;
    print!("{}", cfg.to_toml()?);

    let bad = resolve_with(Some("[phases.negative]\nalpha = -1.0\n"), [], &Overrides::default());
    println!("# rejected: {}", bad.unwrap_err());
    Ok(())
}
