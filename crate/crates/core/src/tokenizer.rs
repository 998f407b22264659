//! CLIP byte-pair-encoding tokenizer.
//!
//! Produces fixed-length sequences laid out as
//! `[<|startoftext|>, t1 .. tN, <|endoftext|>, <|endoftext|> ..]`, i.e. the
//! end-of-text token doubles as padding. Text is normalized with NFC,
//! whitespace collapse and lowercasing, split with the CLIP word pattern,
//! mapped to the byte-level alphabet and merged by rank.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use regex::Regex;
use serde::de::{Deserializer, MapAccess, Visitor};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const SOS_TOKEN: &str = "<|startoftext|>";
pub const EOS_TOKEN: &str = "<|endoftext|>";
pub const END_OF_WORD: &str = "</w>";
/// Token positions per prompt for the SD 1.4 text encoder.
pub const DEFAULT_CONTEXT_LEN: usize = 77;

const SPLIT_PATTERN: &str = r"(?i)'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+";

/// The GPT-2/CLIP reversible byte to printable-character table.
fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut assigned = [false; 256];
    for b in (b'!'..=b'~').chain(0xA1..=0xAC).chain(0xAE..=0xFF) {
        table[b as usize] = char::from(b);
        assigned[b as usize] = true;
    }
    let mut n = 0u32;
    for b in 0..256usize {
        if !assigned[b] {
            table[b] = char::from_u32(256 + n).expect("valid code point");
            n += 1;
        }
    }
    table
}

/// Interned BPE symbols. Symbol ids below `vocab_size` coincide with token
/// ids; merge intermediates missing from the vocabulary get ids past the end.
#[derive(Debug, Clone, Default)]
struct Symbols {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Symbols {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }
}

#[derive(Debug, Clone, Copy)]
struct MergeRule {
    rank: u32,
    result: u32,
}

/// Token table plus ranked merge rules. Immutable after loading.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    symbols: Symbols,
    vocab_size: usize,
    merges: Vec<(String, String)>,
    merge_rules: HashMap<(u32, u32), MergeRule>,
    byte_encoder: [char; 256],
    byte_decoder: HashMap<char, u8>,
    sos_id: u32,
    eos_id: u32,
    context_len: usize,
    splitter: Regex,
    whitespace: Regex,
}

/// Fixed-length token ids with the position of the first end-of-text token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u32>,
    eos_index: usize,
    content_len: usize,
}

impl TokenSequence {
    /// Validates the sos/content/eos/pad layout.
    pub fn from_ids(ids: Vec<u32>, sos_id: u32, eos_id: u32) -> Result<Self> {
        if ids.len() < 2 {
            return Err(Error::Integrity(format!(
                "token sequence of length {} cannot hold <SOS> and <EOS>",
                ids.len()
            )));
        }
        if ids[0] != sos_id {
            return Err(Error::Integrity(format!(
                "position 0 holds {} instead of <SOS> ({sos_id})",
                ids[0]
            )));
        }
        let eos_index = eos_index_of(&ids, eos_id)?;
        if let Some(k) = ids[1..].iter().position(|&id| id == sos_id) {
            return Err(Error::Integrity(format!("<SOS> repeated at position {}", k + 1)));
        }
        if let Some(k) = ids[eos_index..].iter().position(|&id| id != eos_id) {
            return Err(Error::Integrity(format!(
                "non-padding id after <EOS> at position {}",
                eos_index + k
            )));
        }
        Ok(Self {
            ids,
            eos_index,
            content_len: eos_index - 1,
        })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn eos_index(&self) -> usize {
        self.eos_index
    }

    /// Number of non-special tokens between `<SOS>` and `<EOS>`.
    pub fn content_len(&self) -> usize {
        self.content_len
    }

    pub fn content_ids(&self) -> &[u32] {
        &self.ids[1..self.eos_index]
    }
}

/// Position of the first `eos_id` in `ids`.
pub fn eos_index_of(ids: &[u32], eos_id: u32) -> Result<usize> {
    ids.iter()
        .position(|&id| id == eos_id)
        .ok_or_else(|| Error::Integrity("token sequence has no <EOS>".into()))
}

impl Vocabulary {
    pub fn from_files(vocab: impl AsRef<Path>, merges: impl AsRef<Path>) -> Result<Self> {
        let open = |p: &Path| {
            File::open(p).map_err(|e| Error::Load(format!("cannot open {}: {e}", p.display())))
        };
        let v = open(vocab.as_ref())?;
        let m = open(merges.as_ref())?;
        Self::load(BufReader::new(v), BufReader::new(m))
    }

    /// Reads a JSON `token -> id` object and a ranked merges listing (one
    /// space-separated pair per line, optional `#version` header).
    pub fn load(vocab: impl Read, merges: impl BufRead) -> Result<Self> {
        let entries = parse_vocab_json(vocab)?;
        let vocab_size = entries.len();

        let mut by_id: Vec<Option<&str>> = vec![None; vocab_size];
        let mut seen = HashMap::with_capacity(vocab_size);
        for (token, id) in &entries {
            if seen.insert(token.as_str(), *id).is_some() {
                return Err(Error::Integrity(format!("duplicate token {token:?}")));
            }
            let slot = usize::try_from(*id)
                .ok()
                .and_then(|i| by_id.get_mut(i))
                .ok_or_else(|| {
                    Error::Integrity(format!(
                        "id {id} of {token:?} outside dense range [0, {vocab_size})"
                    ))
                })?;
            if let Some(other) = slot {
                return Err(Error::Integrity(format!(
                    "id {id} assigned to both {other:?} and {token:?}"
                )));
            }
            *slot = Some(token);
        }

        let mut symbols = Symbols::default();
        for token in by_id.iter().map(|t| t.expect("dense ids checked above")) {
            symbols.intern(token);
        }
        let special = |name: &str| {
            symbols
                .index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Integrity(format!("special token {name} missing")))
        };
        let sos_id = special(SOS_TOKEN)?;
        let eos_id = special(EOS_TOKEN)?;

        let byte_encoder = bytes_to_unicode();
        let byte_decoder = byte_encoder
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();
        for c in byte_encoder {
            symbols.intern(&c.to_string());
            symbols.intern(&format!("{c}{END_OF_WORD}"));
        }

        let mut merge_list = Vec::new();
        let mut merge_rules = HashMap::new();
        for (lineno, line) in merges.lines().enumerate() {
            let line = line?;
            let line_no = lineno + 1;
            if (lineno == 0 && line.starts_with("#version")) || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected two symbols, found {line:?}"),
                });
            };
            let sa = symbols.intern(a);
            let sb = symbols.intern(b);
            let result = symbols.intern(&format!("{a}{b}"));
            let rank = merge_list.len() as u32;
            if merge_rules
                .insert((sa, sb), MergeRule { rank, result })
                .is_some()
            {
                return Err(Error::Integrity(format!(
                    "merge rule {a:?} {b:?} repeated at line {line_no}"
                )));
            }
            merge_list.push((a.to_owned(), b.to_owned()));
        }

        Ok(Self {
            symbols,
            vocab_size,
            merges: merge_list,
            merge_rules,
            byte_encoder,
            byte_decoder,
            sos_id,
            eos_id,
            context_len: DEFAULT_CONTEXT_LEN,
            splitter: Regex::new(SPLIT_PATTERN).expect("valid split pattern"),
            whitespace: Regex::new(r"\s+").expect("valid whitespace pattern"),
        })
    }

    /// Overrides the per-prompt token count (77 for SD 1.4).
    pub fn with_context_len(mut self, context_len: usize) -> Result<Self> {
        if context_len < 2 {
            return Err(Error::Parameter(format!(
                "context length {context_len} leaves no room for <SOS> and <EOS>"
            )));
        }
        self.context_len = context_len;
        Ok(self)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn sos_id(&self) -> u32 {
        self.sos_id
    }

    pub fn eos_id(&self) -> u32 {
        self.eos_id
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token_to_id(&self, token: &str) -> Option<u32> {
        self.symbols
            .index
            .get(token)
            .copied()
            .filter(|&id| (id as usize) < self.vocab_size)
    }

    pub fn id_to_token(&self, id: u32) -> Option<&str> {
        self.symbols
            .names
            .get(id as usize)
            .filter(|_| (id as usize) < self.vocab_size)
            .map(String::as_str)
    }

    /// NFC, whitespace collapse, trim, lowercase.
    pub fn normalize(&self, text: &str) -> String {
        let composed: String = text.nfc().collect();
        self.whitespace
            .replace_all(&composed, " ")
            .trim()
            .to_lowercase()
    }

    /// BPE pieces of `text` without specials or truncation.
    pub fn encode_pieces(&self, text: &str) -> Vec<u32> {
        let normalized = self.normalize(text);
        let mut out = Vec::new();
        for word in self.splitter.find_iter(&normalized) {
            self.bpe_word(word.as_str(), &mut out);
        }
        out
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut pieces = self.encode_pieces(text);
        pieces.truncate(self.context_len - 2);
        let mut ids = Vec::with_capacity(self.context_len);
        ids.push(self.sos_id);
        ids.extend_from_slice(&pieces);
        let eos_index = ids.len();
        ids.resize(self.context_len, self.eos_id);
        TokenSequence {
            ids,
            eos_index,
            content_len: eos_index - 1,
        }
    }

    /// Content tokens back to text; specials and padding are dropped.
    pub fn decode(&self, seq: &TokenSequence) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in seq.ids() {
            if id as usize >= self.vocab_size {
                return Err(Error::Lookup {
                    id,
                    vocab_size: self.vocab_size,
                });
            }
        }
        for &id in seq.content_ids() {
            let token = &self.symbols.names[id as usize];
            let (body, word_end) = match token.strip_suffix(END_OF_WORD) {
                Some(body) => (body, true),
                None => (token.as_str(), false),
            };
            bytes.extend(body.chars().filter_map(|c| self.byte_decoder.get(&c)));
            if word_end {
                bytes.push(b' ');
            }
        }
        let text = String::from_utf8_lossy(&bytes);
        Ok(self.whitespace.replace_all(&text, " ").trim().to_owned())
    }

    fn bpe_word(&self, word: &str, out: &mut Vec<u32>) {
        let bytes = word.as_bytes();
        let Some((&last, init)) = bytes.split_last() else {
            return;
        };
        let mut syms: Vec<u32> = init
            .iter()
            .map(|&b| self.symbols.index[self.byte_encoder[b as usize].to_string().as_str()])
            .collect();
        let last_sym = format!("{}{END_OF_WORD}", self.byte_encoder[last as usize]);
        syms.push(self.symbols.index[last_sym.as_str()]);

        while syms.len() > 1 {
            let best = syms
                .windows(2)
                .filter_map(|p| {
                    self.merge_rules
                        .get(&(p[0], p[1]))
                        .map(|rule| (rule.rank, p[0], p[1], rule.result))
                })
                .min_by_key(|&(rank, ..)| rank);
            let Some((_, first, second, result)) = best else {
                break;
            };
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == first && syms[i + 1] == second {
                    merged.push(result);
                    i += 2;
                } else {
                    merged.push(syms[i]);
                    i += 1;
                }
            }
            syms = merged;
        }

        for sym in syms {
            if (sym as usize) < self.vocab_size {
                out.push(sym);
            } else {
                self.push_fallback(sym, out);
            }
        }
    }

    /// A merged piece that is not itself a vocabulary entry degrades to its
    /// characters; characters missing from the vocabulary are dropped.
    fn push_fallback(&self, sym: u32, out: &mut Vec<u32>) {
        let name = &self.symbols.names[sym as usize];
        let (body, word_end) = match name.strip_suffix(END_OF_WORD) {
            Some(body) => (body, true),
            None => (name.as_str(), false),
        };
        let n = body.chars().count();
        for (i, c) in body.chars().enumerate() {
            let piece = if word_end && i + 1 == n {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            };
            if let Some(id) = self.token_to_id(&piece) {
                out.push(id);
            }
        }
    }
}

/// Reads a JSON object into `(token, id)` pairs, keeping duplicates so they
/// can be reported instead of silently overwritten.
fn parse_vocab_json(reader: impl Read) -> Result<Vec<(String, u64)>> {
    struct Entries;

    impl<'de> Visitor<'de> for Entries {
        type Value = Vec<(String, u64)>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a JSON object mapping tokens to integer ids")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
            let mut out = Vec::with_capacity(map.size_hint().unwrap_or(0));
            while let Some(entry) = map.next_entry::<String, u64>()? {
                out.push(entry);
            }
            Ok(out)
        }
    }

    let mut de = serde_json::Deserializer::from_reader(reader);
    let parsed = de
        .deserialize_map(Entries)
        .and_then(|v| de.end().map(|_| v));
    parsed.map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}
