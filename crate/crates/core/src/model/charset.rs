use crate::error::{Error, Result};

/// Drawable symbols in index order; end-of-sequence follows at index 62.
pub const SYMBOLS: &str = "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
/// Index of the end-of-sequence symbol, also fed as the start token.
pub const EOS: usize = 62;
/// Alphabet size including end-of-sequence.
pub const CHARSET_SIZE: usize = 63;

pub fn index_of(c: char) -> Option<usize> {
    match c {
        '0'..='9' => Some(c as usize - '0' as usize),
        'a'..='z' => Some(10 + c as usize - 'a' as usize),
        'A'..='Z' => Some(36 + c as usize - 'A' as usize),
        _ => None,
    }
}

pub fn symbol(index: usize) -> Option<char> {
    SYMBOLS.chars().nth(index)
}

/// Symbol indices of `text`, without end-of-sequence.
pub fn encode(text: &str) -> Result<Vec<usize>> {
    text.chars().map(|c| index_of(c).ok_or(Error::UnsupportedChar(c))).collect()
}

/// Training target: symbol indices followed by end-of-sequence.
pub fn encode_target(text: &str) -> Result<Vec<usize>> {
    let mut out = encode(text)?;
    out.push(EOS);
    Ok(out)
}

/// Text for `indices`, stopping at the first end-of-sequence.
pub fn decode(indices: &[usize]) -> String {
    indices
        .iter()
        .take_while(|&&i| i != EOS)
        .filter_map(|&i| symbol(i))
        .collect()
}
