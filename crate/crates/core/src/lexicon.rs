//! Graphemic lexicon construction with position-tagged units, lexicon
//! expansion, and multi-word named-entity joining.
//!
//! Each letter of a word becomes one unit tagged `_B`/`_I`/`_E` by
//! position, or `_S` for single-letter words. The underscore inside a
//! joined multi-word entity maps to a silence-like `SIL` unit instead of
//! being dropped, so graphemization stays invertible.

use std::collections::{BTreeMap, BTreeSet};

use crate::{Error, Result};

/// Unit base emitted for the underscore joining multi-word entities.
pub const SIL_BASE: &str = "SIL";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexiconKind {
    Graphemic,
    Phonetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub kind: LexiconKind,
    /// word -> pronunciations; graphemic lexicons hold exactly one each.
    pub entries: BTreeMap<String, Vec<Vec<String>>>,
    pub unit_inventory: BTreeSet<String>,
}

fn position_tag(i: usize, len: usize) -> &'static str {
    if len == 1 {
        "S"
    } else if i == 0 {
        "B"
    } else if i + 1 == len {
        "E"
    } else {
        "I"
    }
}

/// Position-tagged graphemization: one unit per character, `SIL` for
/// underscores. Allowed characters: lowercase ASCII letters, digits,
/// apostrophes, underscores.
pub fn graphemize(word: &str) -> Result<Vec<String>> {
    if word.is_empty() {
        return Err(Error::EmptyWord);
    }
    let chars: Vec<char> = word.chars().collect();
    let mut units = Vec::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        let ok = c.is_ascii_lowercase() || c.is_ascii_digit() || c == '\'' || c == '_';
        if !ok {
            return Err(Error::UnsupportedChar { word: word.to_string(), ch: c });
        }
        let base = if c == '_' { SIL_BASE.to_string() } else { c.to_string() };
        units.push(format!("{}_{}", base, position_tag(i, chars.len())));
    }
    Ok(units)
}

/// Inverse of [`graphemize`]: strips position tags and maps `SIL` units
/// back to the underscore.
pub fn ungraphemize(units: &[String]) -> Result<String> {
    let mut word = String::new();
    for u in units {
        let (base, _tag) = u
            .rsplit_once('_')
            .ok_or_else(|| Error::config(format!("unit `{}` has no position tag", u)))?;
        if base == SIL_BASE {
            word.push('_');
        } else {
            word.push_str(base);
        }
    }
    if word.is_empty() {
        return Err(Error::EmptyWord);
    }
    Ok(word)
}

/// Joins the words of a multi-word entity with underscores; a single
/// token passes through unchanged.
pub fn join_multiword(entity_words: &[String]) -> Result<String> {
    if entity_words.is_empty() {
        return Err(Error::EmptyTokenList);
    }
    if entity_words.iter().any(|w| w.is_empty()) {
        return Err(Error::EmptyWord);
    }
    Ok(entity_words.join("_"))
}

impl Lexicon {
    pub fn empty_graphemic() -> Self {
        Lexicon { kind: LexiconKind::Graphemic, entries: BTreeMap::new(), unit_inventory: BTreeSet::new() }
    }

    /// Graphemic lexicon over a word list.
    pub fn graphemic_from_words<'a, I: IntoIterator<Item = &'a str>>(words: I) -> Result<Self> {
        let mut lex = Self::empty_graphemic();
        for w in words {
            lex.insert_graphemic(w)?;
        }
        Ok(lex)
    }

    fn insert_graphemic(&mut self, word: &str) -> Result<bool> {
        if self.entries.contains_key(word) {
            return Ok(false);
        }
        let units = graphemize(word)?;
        for u in &units {
            self.unit_inventory.insert(u.clone());
        }
        self.entries.insert(word.to_string(), vec![units]);
        Ok(true)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn words(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Serializes to the lexicon text format (`# kind:` header, then
    /// `word<TAB>units` lines, one pronunciation per line).
    pub fn serialize(&self) -> String {
        let kind = match self.kind {
            LexiconKind::Graphemic => "graphemic",
            LexiconKind::Phonetic => "phonetic",
        };
        let mut out = format!("# kind: {}\n", kind);
        for (word, prons) in &self.entries {
            for pron in prons {
                out.push_str(&format!("{}\t{}\n", word, pron.join(" ")));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Lexicon> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty lexicon file"))?;
        let kind = match header.trim() {
            "# kind: graphemic" => LexiconKind::Graphemic,
            "# kind: phonetic" => LexiconKind::Phonetic,
            other => return Err(Error::parse(1, format!("bad lexicon header `{}`", other))),
        };
        let mut entries: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
        let mut inventory = BTreeSet::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, pron) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(lineno, "expected `word<TAB>units`"))?;
            let units: Vec<String> = pron.split_whitespace().map(str::to_string).collect();
            if units.is_empty() {
                return Err(Error::parse(lineno, format!("word `{}` has an empty pronunciation", word)));
            }
            for u in &units {
                inventory.insert(u.clone());
            }
            let prons = entries.entry(word.to_string()).or_default();
            if kind == LexiconKind::Graphemic && !prons.is_empty() {
                return Err(Error::parse(
                    lineno,
                    format!("graphemic lexicon has a second pronunciation for `{}`", word),
                ));
            }
            prons.push(units);
        }
        Ok(Lexicon { kind, entries, unit_inventory: inventory })
    }
}

/// Adds graphemized entries for every new word not already present and
/// reports how many were added. The input lexicon is untouched; phonetic
/// lexicons are rejected (no grapheme-to-phoneme training here).
pub fn expand_lexicon(lex: &Lexicon, new_words: &[String]) -> Result<(Lexicon, usize)> {
    if lex.kind == LexiconKind::Phonetic {
        return Err(Error::PhoneticExpansion);
    }
    let mut out = lex.clone();
    let mut added = 0;
    for w in new_words {
        if out.insert_graphemic(w)? {
            added += 1;
        }
    }
    Ok((out, added))
}
