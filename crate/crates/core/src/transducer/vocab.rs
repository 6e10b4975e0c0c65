//! Token inventory; index 0 is always the blank symbol `<b>`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const BLANK_SYMBOL: &str = "<b>";
pub const BLANK_ID: usize = 0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
}

impl Vocab {
    /// `tokens[0]` must be `<b>`; tokens must be unique.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        match tokens.first() {
            Some(t) if t == BLANK_SYMBOL => {}
            Some(t) => return Err(Error::Vocab(format!("line 0 must be {BLANK_SYMBOL}, found {t:?}"))),
            None => return Err(Error::Vocab("empty vocabulary".into())),
        }
        let mut seen = std::collections::HashSet::new();
        for t in &tokens {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Vocab(format!("invalid token {t:?}")));
            }
            if !seen.insert(t.as_str()) {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens })
    }

    /// Blank followed by `labels`.
    pub fn with_labels<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut tokens = vec![BLANK_SYMBOL.to_string()];
        tokens.extend(labels.into_iter().map(Into::into));
        Self::new(tokens)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(|l| l.trim_end_matches('\r').to_string()).filter(|l| !l.is_empty()).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn blank_id(&self) -> usize {
        BLANK_ID
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
