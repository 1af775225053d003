//! Structured records, the corpus file format, linearization and tokenization.
//!
//! A corpus file holds one record per line. Attribute-value records look like
//! `name:Clowns,eatType:pub` and graph records like `__temp__ 72 __temp__`.
//! Either may carry a tab-separated gold label, and an optional third column
//! records label provenance (this is what export bundles write). A leading
//! `id=<n>` column gives an explicit record id; otherwise ids follow record
//! order starting at 0. A `#kind=graph` (or `#kind=attribute_value`) header
//! line switches the record kind.

mod bpe;
mod tokenize;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bpe::{train_bpe, MergeTable, END_OF_WORD};
pub use tokenize::{detokenize_words, Tokenizer, TokenizerConfig, TokenizerMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub u32);

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    AttributeValue,
    Graph,
}

impl RecordKind {
    fn header(self) -> &'static str {
        match self {
            RecordKind::AttributeValue => "#kind=attribute_value",
            RecordKind::Graph => "#kind=graph",
        }
    }
}

/// One whitespace token of a graph record. `tag` holds the attribute name
/// when the token is an attribute tag such as `__temp__`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphToken {
    pub text: String,
    pub tag: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordBody {
    AttributeValue(Vec<(String, String)>),
    Graph(Vec<GraphToken>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredRecord {
    pub id: RecordId,
    pub body: RecordBody,
    pub gold_label: Option<String>,
}

impl StructuredRecord {
    pub fn kind(&self) -> RecordKind {
        match self.body {
            RecordBody::AttributeValue(_) => RecordKind::AttributeValue,
            RecordBody::Graph(_) => RecordKind::Graph,
        }
    }

    /// Attribute names in record order (tags for graph records), duplicates kept.
    pub fn attributes(&self) -> Vec<&str> {
        match &self.body {
            RecordBody::AttributeValue(pairs) => pairs.iter().map(|(a, _)| a.as_str()).collect(),
            RecordBody::Graph(tokens) => tokens.iter().filter_map(|t| t.tag.as_deref()).collect(),
        }
    }

    /// The record's data column in the corpus file format.
    pub fn data_text(&self, delim: &DelimiterConfig) -> String {
        match &self.body {
            RecordBody::AttributeValue(pairs) => pairs
                .iter()
                .map(|(a, v)| format!("{a}{}{v}", delim.attribute_value_separator))
                .collect::<Vec<_>>()
                .join(&delim.pair_delimiter),
            RecordBody::Graph(tokens) => tokens
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelimiterConfig {
    pub pair_delimiter: String,
    pub attribute_tag_delimiter: String,
    pub attribute_value_separator: String,
}

impl Default for DelimiterConfig {
    fn default() -> Self {
        Self {
            pair_delimiter: ",".to_string(),
            attribute_tag_delimiter: "__".to_string(),
            attribute_value_separator: ":".to_string(),
        }
    }
}

impl DelimiterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pair_delimiter.is_empty()
            || self.attribute_tag_delimiter.is_empty()
            || self.attribute_value_separator.is_empty()
        {
            return Err(Error::Config("delimiters must be non-empty".into()));
        }
        if self.pair_delimiter == self.attribute_value_separator {
            return Err(Error::Config(
                "pair delimiter and attribute-value separator must differ".into(),
            ));
        }
        if [&self.pair_delimiter, &self.attribute_value_separator, &self.attribute_tag_delimiter]
            .iter()
            .any(|d| d.contains('\t') || d.contains('\n'))
        {
            return Err(Error::Config("delimiters may not contain tabs or newlines".into()));
        }
        Ok(())
    }

    fn tag_name<'a>(&self, token: &'a str) -> Option<&'a str> {
        let d = self.attribute_tag_delimiter.as_str();
        if token.len() > 2 * d.len() && token.starts_with(d) && token.ends_with(d) {
            Some(&token[d.len()..token.len() - d.len()])
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CorpusRepr", into = "CorpusRepr")]
pub struct Corpus {
    kind: RecordKind,
    records: Vec<StructuredRecord>,
    positions: HashMap<RecordId, usize>,
}

#[derive(Serialize, Deserialize)]
struct CorpusRepr {
    kind: RecordKind,
    records: Vec<StructuredRecord>,
}

impl TryFrom<CorpusRepr> for Corpus {
    type Error = Error;

    fn try_from(repr: CorpusRepr) -> Result<Self> {
        Corpus::new(repr.kind, repr.records)
    }
}

impl From<Corpus> for CorpusRepr {
    fn from(corpus: Corpus) -> Self {
        CorpusRepr { kind: corpus.kind, records: corpus.records }
    }
}

impl Corpus {
    pub fn new(kind: RecordKind, records: Vec<StructuredRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut positions = HashMap::with_capacity(records.len());
        for (pos, record) in records.iter().enumerate() {
            if record.kind() != kind {
                return Err(Error::Config(format!("record {} has the wrong kind", record.id)));
            }
            if positions.insert(record.id, pos).is_some() {
                return Err(Error::DuplicateId(record.id));
            }
        }
        Ok(Self { kind, records, positions })
    }

    pub fn kind(&self) -> RecordKind {
        self.kind
    }

    pub fn records(&self) -> &[StructuredRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: RecordId) -> Option<&StructuredRecord> {
        self.position(id).map(|p| &self.records[p])
    }

    pub fn position(&self, id: RecordId) -> Option<usize> {
        self.positions.get(&id).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = RecordId> + '_ {
        self.records.iter().map(|r| r.id)
    }

    /// Serializes in the corpus file format. Explicit ids are written only
    /// when a record's id differs from its position.
    pub fn to_text(&self, delim: &DelimiterConfig) -> String {
        let mut out = String::new();
        if self.kind == RecordKind::Graph {
            out.push_str(self.kind.header());
            out.push('\n');
        }
        for (pos, record) in self.records.iter().enumerate() {
            if record.id.0 as usize != pos {
                out.push_str(&format!("id={}\t", record.id));
            }
            out.push_str(&record.data_text(delim));
            if let Some(label) = &record.gold_label {
                out.push('\t');
                out.push_str(label);
            }
            out.push('\n');
        }
        out
    }
}

/// Parses a corpus file. `kind` is the default record kind; a `#kind=` header
/// line overrides it.
pub fn parse_corpus(raw: &[u8], delim: &DelimiterConfig, kind: RecordKind) -> Result<Corpus> {
    delim.validate()?;
    let text = std::str::from_utf8(raw).map_err(|e| Error::Parse {
        line: 0,
        message: format!("invalid utf-8: {e}"),
    })?;
    let mut kind = kind;
    let mut records = Vec::new();
    let mut seen: HashMap<RecordId, usize> = HashMap::new();

    for (index, line) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if let Some(header) = line.strip_prefix("#kind=") {
            if !records.is_empty() {
                return Err(parse_err(line_no, "kind header after records"));
            }
            kind = match header.trim() {
                "graph" => RecordKind::Graph,
                "attribute_value" => RecordKind::AttributeValue,
                other => return Err(parse_err(line_no, &format!("unknown kind {other:?}"))),
            };
            continue;
        }
        if line.trim().is_empty() {
            return Err(parse_err(line_no, "empty line"));
        }

        let mut columns: Vec<&str> = line.split('\t').collect();
        let mut id = RecordId(records.len() as u32);
        if let Some(explicit) = columns[0].strip_prefix("id=") {
            let n: u32 = explicit
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, &format!("bad id {explicit:?}")))?;
            id = RecordId(n);
            columns.remove(0);
            if columns.is_empty() {
                return Err(parse_err(line_no, "missing data column"));
            }
        }
        if columns.len() > 3 {
            return Err(parse_err(line_no, "too many columns"));
        }
        if seen.insert(id, line_no).is_some() {
            return Err(Error::DuplicateId(id));
        }

        let body = match kind {
            RecordKind::AttributeValue => parse_pairs(columns[0], delim, line_no)?,
            RecordKind::Graph => parse_graph(columns[0], delim, line_no)?,
        };
        let gold_label = columns
            .get(1)
            .map(|l| l.trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string);
        records.push(StructuredRecord { id, body, gold_label });
    }

    Corpus::new(kind, records)
}

fn parse_err(line: usize, message: &str) -> Error {
    Error::Parse { line, message: message.to_string() }
}

fn parse_pairs(data: &str, delim: &DelimiterConfig, line: usize) -> Result<RecordBody> {
    let mut pairs = Vec::new();
    for piece in data.split(delim.pair_delimiter.as_str()) {
        let (attribute, value) = piece
            .split_once(delim.attribute_value_separator.as_str())
            .ok_or_else(|| parse_err(line, &format!("missing separator in {piece:?}")))?;
        let (attribute, value) = (attribute.trim(), value.trim());
        if attribute.is_empty() {
            return Err(parse_err(line, "empty attribute"));
        }
        if value.is_empty() {
            return Err(parse_err(line, &format!("empty value for {attribute:?}")));
        }
        pairs.push((attribute.to_string(), value.to_string()));
    }
    Ok(RecordBody::AttributeValue(pairs))
}

fn parse_graph(data: &str, delim: &DelimiterConfig, line: usize) -> Result<RecordBody> {
    let tokens: Vec<GraphToken> = data
        .split_whitespace()
        .map(|t| GraphToken {
            text: t.to_string(),
            tag: delim.tag_name(t).map(str::to_string),
        })
        .collect();
    if tokens.is_empty() {
        return Err(parse_err(line, "empty graph record"));
    }
    Ok(RecordBody::Graph(tokens))
}

/// The token sequence fed to the sequence model for one record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearizedData {
    pub record_id: RecordId,
    pub tokens: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Human,
    SuggestedAccepted,
    SuggestedCorrected,
    Predicted,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Human => "human",
            LabelSource::SuggestedAccepted => "suggested_accepted",
            LabelSource::SuggestedCorrected => "suggested_corrected",
            LabelSource::Predicted => "predicted",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextLabel {
    pub record_id: RecordId,
    pub text: String,
    pub tokens: Vec<String>,
    pub source: LabelSource,
}

impl TextLabel {
    pub fn new(
        record_id: RecordId,
        text: &str,
        source: LabelSource,
        tokenizer: &Tokenizer,
    ) -> Result<Self> {
        let tokens = tokenizer.tokenize(text)?;
        Ok(Self { record_id, text: text.to_string(), tokens, source })
    }
}

/// Flattens a record into its token sequence: per pair the attribute tokens,
/// the separator, the value tokens, with the pair delimiter between pairs.
/// Graph attribute tags pass through untouched.
pub fn linearize(
    record: &StructuredRecord,
    delim: &DelimiterConfig,
    tokenizer: &Tokenizer,
) -> Result<LinearizedData> {
    let mut tokens = Vec::new();
    match &record.body {
        RecordBody::AttributeValue(pairs) => {
            for (i, (attribute, value)) in pairs.iter().enumerate() {
                if i > 0 {
                    tokens.push(delim.pair_delimiter.clone());
                }
                tokens.extend(tokenizer.tokenize(attribute)?);
                tokens.push(delim.attribute_value_separator.clone());
                tokens.extend(tokenizer.tokenize(value)?);
            }
        }
        RecordBody::Graph(graph) => {
            for token in graph {
                if token.tag.is_some() {
                    tokens.push(token.text.clone());
                } else {
                    tokens.extend(tokenizer.tokenize(&token.text)?);
                }
            }
        }
    }
    if tokens.is_empty() {
        return Err(Error::EmptyTokens);
    }
    Ok(LinearizedData { record_id: record.id, tokens })
}
