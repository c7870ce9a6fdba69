//! Document collections, labeled examples, and the text utilities the
//! statistics and fallback paths rely on.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;


#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate document id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("duplicate example id {id:?} at line {line}")]
    DuplicateExample { id: String, line: usize },
    #[error("empty document id at line {line}")]
    EmptyId { line: usize },
    #[error("document {id:?} has empty text")]
    EmptyText { id: String },
    #[error("empty question: {id}")]
    EmptyQuestion { id: String },
    #[error("empty gold answers: {id}")]
    EmptyGold { id: String },
}

/// Whether a document comes from the original corpus or was written back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Original,
    Writeback,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Original => "original",
            Source::Writeback => "writeback",
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(Source::Original),
            "writeback" => Ok(Source::Writeback),
            other => Err(format!("unknown source label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub source: Source,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            text: text.into(),
            source: Source::Original,
            meta: BTreeMap::new(),
        }
    }

    /// The text that gets embedded: title and body on separate lines.
    pub fn retrieval_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{}\n{}", self.title, self.text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
}

#[derive(Deserialize)]
struct ExampleRecord {
    id: Option<String>,
    question: String,
    gold_answers: Vec<String>,
}

impl LabeledExample {
    fn validate(&self) -> Result<(), CorpusError> {
        if self.question.trim().is_empty() {
            return Err(CorpusError::EmptyQuestion { id: self.id.clone() });
        }
        if self.gold_answers.is_empty() || self.gold_answers.iter().any(|g| g.trim().is_empty()) {
            return Err(CorpusError::EmptyGold { id: self.id.clone() });
        }
        Ok(())
    }
}

/// Immutable, ordered document collection with id lookup.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    documents: Vec<Document>,
    id_lookup: HashMap<String, usize>,
}

impl CorpusStore {
    /// Builds a store, rejecting empty ids, empty texts and duplicates.
    /// Line numbers in errors are 1-based positions in `docs`.
    pub fn from_documents(docs: Vec<Document>) -> Result<Self, CorpusError> {
        let mut id_lookup = HashMap::with_capacity(docs.len());
        for (pos, doc) in docs.iter().enumerate() {
            validate_document(doc, pos + 1)?;
            if id_lookup.insert(doc.id.clone(), pos).is_some() {
                return Err(CorpusError::DuplicateId {
                    id: doc.id.clone(),
                    line: pos + 1,
                });
            }
        }
        Ok(Self {
            documents: docs,
            id_lookup,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.id_lookup.get(id).map(|&i| &self.documents[i])
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }
}

impl<'a> IntoIterator for &'a CorpusStore {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.documents.iter()
    }
}

/// Read access to documents by id, possibly spanning several stores.
pub trait DocLookup: Sync {
    fn lookup(&self, id: &str) -> Option<&Document>;
}

impl DocLookup for CorpusStore {
    fn lookup(&self, id: &str) -> Option<&Document> {
        self.get(id)
    }
}

/// Original corpus plus write-back units, searched in that order.
pub struct MergedLookup<'a> {
    pub original: &'a CorpusStore,
    pub writeback: Option<&'a CorpusStore>,
}

impl DocLookup for MergedLookup<'_> {
    fn lookup(&self, id: &str) -> Option<&Document> {
        self.original
            .get(id)
            .or_else(|| self.writeback.and_then(|wb| wb.get(id)))
    }
}

fn validate_document(doc: &Document, line: usize) -> Result<(), CorpusError> {
    if doc.id.is_empty() {
        return Err(CorpusError::EmptyId { line });
    }
    if doc.text.trim().is_empty() {
        return Err(CorpusError::EmptyText { id: doc.id.clone() });
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Iterates `(1-based line number, line)` skipping blank lines.
fn records(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<CorpusStore, CorpusError> {
    let path = path.as_ref();
    let content = read_file(path)?;
    let mut documents = Vec::new();
    let mut id_lookup = HashMap::new();
    for (line, raw) in records(&content) {
        let doc: Document = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        validate_document(&doc, line)?;
        if id_lookup.insert(doc.id.clone(), documents.len()).is_some() {
            return Err(CorpusError::DuplicateId { id: doc.id, line });
        }
        documents.push(doc);
    }
    Ok(CorpusStore {
        documents,
        id_lookup,
    })
}

/// Loads labeled examples. Records without an id get `ex-<line>`.
pub fn load_examples(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>, CorpusError> {
    let path = path.as_ref();
    let content = read_file(path)?;
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (line, raw) in records(&content) {
        let rec: ExampleRecord = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let example = LabeledExample {
            id: rec.id.unwrap_or_else(|| format!("ex-{line}")),
            question: rec.question,
            gold_answers: rec.gold_answers,
        };
        example.validate()?;
        if seen.insert(example.id.clone(), line).is_some() {
            return Err(CorpusError::DuplicateExample {
                id: example.id,
                line,
            });
        }
        out.push(example);
    }
    Ok(out)
}

/// Writes one JSON record per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> std::io::Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> std::io::Result<()> {
    write_jsonl(path, docs)
}

pub fn write_examples(path: impl AsRef<Path>, examples: &[LabeledExample]) -> std::io::Result<()> {
    write_jsonl(path, examples)
}

/// Number of maximal non-whitespace runs.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

/// Splits on `.`, `?`, `!` when followed by whitespace or end of text.
/// Abbreviations are split too ("Dr. Smith" gives "Dr." and "Smith ...").
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !is_terminator(c) {
            continue;
        }
        let boundary = match chars.peek() {
            None => true,
            Some(&(_, next)) => next.is_whitespace(),
        };
        if boundary {
            let end = i + c.len_utf8();
            push_fragment(&mut out, &text[start..end]);
            start = end;
        }
    }
    push_fragment(&mut out, &text[start..]);
    out
}

fn push_fragment(out: &mut Vec<String>, frag: &str) {
    let trimmed = frag.trim();
    if !trimmed.is_empty() {
        out.push(trimmed.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn temp_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_documents_in_file_order() {
        let f = temp_file(
            "{\"id\":\"b\",\"text\":\"second doc\"}\n{\"id\":\"a\",\"title\":\"T\",\"text\":\"first\",\"source\":\"writeback\"}\n",
        );
        let store = load_corpus(f.path()).unwrap();
        let ids: Vec<_> = store.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
        assert_eq!(store.get("b").unwrap().source, Source::Original);
        assert_eq!(store.get("a").unwrap().source, Source::Writeback);
        assert_eq!(store.get("a").unwrap().title, "T");
    }

    #[test]
    fn duplicate_id_names_id_and_line() {
        let f = temp_file(
            "{\"id\":\"d1\",\"text\":\"x\"}\n{\"id\":\"d2\",\"text\":\"y\"}\n{\"id\":\"d1\",\"text\":\"z\"}\n",
        );
        let err = load_corpus(f.path()).unwrap_err();
        match &err {
            CorpusError::DuplicateId { id, line } => {
                assert_eq!(id, "d1");
                assert_eq!(*line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("d1"));
    }

    #[test]
    fn malformed_line_carries_line_number() {
        let f = temp_file("{\"id\":\"d1\",\"text\":\"x\"}\nnot json\n");
        match load_corpus(f.path()).unwrap_err() {
            CorpusError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn blank_text_is_rejected() {
        let f = temp_file("{\"id\":\"d1\",\"text\":\"   \"}\n");
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::EmptyText { .. })
        ));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_corpus("/nonexistent/corpus.jsonl").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/corpus.jsonl"));
    }

    #[test]
    fn loads_examples() {
        let f = temp_file(
            "{\"id\":\"e1\",\"question\":\"q\",\"gold_answers\":[\"a\"]}\n\
             {\"id\":\"e2\",\"question\":\"do iran and afghanistan speak the same language\",\"gold_answers\":[\"True\"]}\n",
        );
        let ex = load_examples(f.path()).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].gold_answers, ["a"]);
        assert_eq!(ex[1].gold_answers, ["True"]);
    }

    #[test]
    fn empty_gold_answers_rejected() {
        let f = temp_file("{\"id\":\"e1\",\"question\":\"q\",\"gold_answers\":[]}\n");
        let err = load_examples(f.path()).unwrap_err();
        assert_eq!(err.to_string(), "empty gold answers: e1");
    }

    #[test]
    fn missing_example_id_is_synthesized_from_line() {
        let f = temp_file("\n{\"question\":\"q\",\"gold_answers\":[\"a\"]}\n");
        let ex = load_examples(f.path()).unwrap();
        assert_eq!(ex[0].id, "ex-2");
    }

    #[test]
    fn corpus_round_trip_preserves_fields() {
        let mut d = Document::new("x", "Title", "Body text.");
        d.meta.insert("k".into(), "v".into());
        let docs = vec![d, Document::new("y", "", "Other.")];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write_corpus(&p, &docs).unwrap();
        let back = load_corpus(&p).unwrap();
        assert_eq!(back.documents(), &docs[..]);
    }

    #[test]
    fn count_tokens_examples() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("a  b\tc"), 3);
        assert_eq!(count_tokens("  lead and trail \n"), 3);
    }

    #[test]
    fn split_sentences_examples() {
        assert_eq!(split_sentences("A. B? C!"), ["A.", "B?", "C!"]);
        assert_eq!(split_sentences("no terminator"), ["no terminator"]);
        assert_eq!(
            split_sentences("Dr. Smith arrived. He left."),
            ["Dr.", "Smith arrived.", "He left."]
        );
        assert_eq!(split_sentences("3.14 is pi."), ["3.14 is pi."]);
        assert!(split_sentences("   ").is_empty());
    }

    proptest! {
        #[test]
        fn count_tokens_additive(a in "[a-z ]{0,20}[a-z]", b in "[a-z][a-z \t]{0,20}") {
            let joined = format!("{a} {b}");
            prop_assert_eq!(count_tokens(&joined), count_tokens(&a) + count_tokens(&b));
        }

        #[test]
        fn split_sentences_properties(text in "[a-zA-Z .?!\n]{0,80}") {
            let parts = split_sentences(&text);
            let terminators = text.chars().filter(|&c| is_terminator(c)).count();
            prop_assert!(parts.len() <= 1 + terminators);
            prop_assert!(parts.iter().all(|p| !p.is_empty()));
            let rejoined: String = parts.join(" ").chars().filter(|c| !c.is_whitespace()).collect();
            let original: String = text.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(rejoined, original);
        }
    }
}
