/// Padding token; never receives a label.
pub const PAD: usize = 256;
/// Beginning-of-sequence token, prepended to every prompt.
pub const BOS: usize = 257;
/// End-of-sequence token, appended to every completion.
pub const EOS: usize = 258;
/// 256 byte values plus the three specials.
pub const VOCAB_SIZE: usize = 259;

/// One token per UTF-8 byte.
pub fn tokenize(text: &str) -> Vec<usize> {
    text.bytes().map(usize::from).collect()
}

/// Inverse of [`tokenize`]. Special tokens are skipped; byte runs that are not
/// valid UTF-8 (possible in model output) are replaced with U+FFFD.
pub fn detokenize(tokens: &[usize]) -> String {
    let bytes: Vec<u8> = tokens
        .iter()
        .filter_map(|&t| u8::try_from(t).ok())
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}
