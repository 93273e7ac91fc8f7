//! The closed prompt vocabulary shared by the scene generator, the text
//! encoder and the embedder.

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SEP: usize = 1;

pub const WORDS: [&str; 40] = [
    "<pad>",
    "|",
    "stripes",
    "checker",
    "gradient",
    "blobs",
    "solid",
    "red",
    "green",
    "blue",
    "yellow",
    "cyan",
    "magenta",
    "white",
    "black",
    "orange",
    "purple",
    "gray",
    "horizontal",
    "vertical",
    "diagonal",
    "fine",
    "coarse",
    "circle",
    "square",
    "triangle",
    "ring",
    "small",
    "large",
    "left",
    "right",
    "top",
    "bottom",
    "center",
    "dark",
    "light",
    "dotted",
    "plain",
    "pattern",
    "texture",
];

pub const SIZE: usize = WORDS.len();

pub fn id(word: &str) -> Result<usize> {
    WORDS
        .iter()
        .position(|w| *w == word)
        .ok_or_else(|| Error::contract(format!("word {word:?} not in vocabulary")))
}

/// Whitespace-separated words to ids; `|` is the separator token.
pub fn encode(text: &str) -> Result<Vec<usize>> {
    text.split_whitespace().map(id).collect()
}

pub fn decode(ids: &[usize]) -> Result<String> {
    let words = ids
        .iter()
        .map(|&i| {
            WORDS
                .get(i)
                .copied()
                .ok_or_else(|| Error::contract(format!("token id {i} outside vocabulary")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(words.join(" "))
}

pub fn check(ids: &[usize]) -> Result<()> {
    match ids.iter().find(|&&i| i >= SIZE) {
        Some(bad) => Err(Error::contract(format!(
            "token id {bad} outside vocabulary of {SIZE}"
        ))),
        None => Ok(()),
    }
}
