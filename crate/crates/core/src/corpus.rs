//! Fact corpora, relation templates and vocabularies.
//!
//! The on-disk formats follow the LAMA distribution: one JSON object per line
//! with `sub_label`, `obj_label` and `predicate_id` for facts, and `relation`,
//! `template` and an optional `type` for templates. Slot markers may be
//! written either as `[s]`/`[o]` or as `[X]`/`[Y]`; both are normalized on
//! ingest.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slot markers accepted in template surfaces, as (subject, object) pairs.
const SLOT_NOTATIONS: [(&str, &str); 2] = [("[s]", "[o]"), ("[X]", "[Y]")];

/// One ⟨subject, relation, object⟩ datum.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactTriple {
    pub subject: String,
    pub relation_id: String,
    pub object: String,
}

impl FactTriple {
    pub fn new(
        subject: impl Into<String>,
        relation_id: impl Into<String>,
        object: impl Into<String>,
    ) -> Result<Self> {
        let fact = FactTriple {
            subject: subject.into(),
            relation_id: relation_id.into(),
            object: object.into(),
        };
        if fact.subject.trim().is_empty() {
            return Err(Error::InvalidFact("empty subject".into()));
        }
        if fact.object.trim().is_empty() {
            return Err(Error::InvalidFact(format!("empty object for {}", fact.subject)));
        }
        if contains_slot_marker(&fact.object) {
            return Err(Error::InvalidFact(format!(
                "object {:?} contains a slot marker",
                fact.object
            )));
        }
        Ok(fact)
    }
}

fn contains_slot_marker(text: &str) -> bool {
    SLOT_NOTATIONS
        .iter()
        .any(|(s, o)| text.contains(s) || text.contains(o))
}

/// Surface family of a template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateStyle {
    NaturalLanguage,
    ArrowDouble,
    ArrowSingle,
    Semicolon,
}

impl TemplateStyle {
    /// Fixed surface of the symbolic styles; `None` for natural language.
    pub fn symbolic_surface(self) -> Option<&'static str> {
        match self {
            TemplateStyle::NaturalLanguage => None,
            TemplateStyle::ArrowDouble => Some("[s] => [o]"),
            TemplateStyle::ArrowSingle => Some("[s] -> [o]"),
            TemplateStyle::Semicolon => Some("([s]; [o])"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateStyle::NaturalLanguage => "nl",
            TemplateStyle::ArrowDouble => "arrow-double",
            TemplateStyle::ArrowSingle => "arrow-single",
            TemplateStyle::Semicolon => "semicolon",
        }
    }
}

impl std::str::FromStr for TemplateStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nl" | "natural-language" | "natural_language" => Ok(TemplateStyle::NaturalLanguage),
            "arrow-double" | "arrow_double" | "=>" => Ok(TemplateStyle::ArrowDouble),
            "arrow-single" | "arrow_single" | "->" => Ok(TemplateStyle::ArrowSingle),
            "semicolon" | ";" => Ok(TemplateStyle::Semicolon),
            other => Err(Error::Config(format!("unknown template style {other:?}"))),
        }
    }
}

impl fmt::Display for TemplateStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cardinality {
    #[serde(rename = "1-1")]
    OneToOne,
    #[serde(rename = "N-1")]
    ManyToOne,
    #[serde(rename = "N-M")]
    ManyToMany,
}

impl Cardinality {
    pub fn as_str(self) -> &'static str {
        match self {
            Cardinality::OneToOne => "1-1",
            Cardinality::ManyToOne => "N-1",
            Cardinality::ManyToMany => "N-M",
        }
    }

    fn parse(text: &str) -> Option<Self> {
        match text {
            "1-1" => Some(Cardinality::OneToOne),
            "N-1" => Some(Cardinality::ManyToOne),
            "N-M" => Some(Cardinality::ManyToMany),
            _ => None,
        }
    }
}

/// A piece of a parsed template surface.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece {
    Literal(String),
    Subject,
    Object,
}

/// Surface pattern of a relation with one subject slot and one object slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTemplate {
    relation_id: String,
    pieces: Vec<Piece>,
    style: TemplateStyle,
    cardinality: Option<Cardinality>,
}

impl RelationTemplate {
    /// Parse a surface written with either slot notation.
    pub fn parse(
        relation_id: impl Into<String>,
        surface: &str,
        style: TemplateStyle,
        cardinality: Option<Cardinality>,
    ) -> Result<Self> {
        let relation_id = relation_id.into();
        let invalid = |reason: String| Error::InvalidTemplate {
            relation: relation_id.clone(),
            reason,
        };

        let mut pieces = Vec::new();
        let mut literal = String::new();
        let (mut subjects, mut objects) = (0, 0);
        let mut rest = surface;
        'scan: while !rest.is_empty() {
            for (s, o) in SLOT_NOTATIONS {
                for (marker, piece) in [(s, Piece::Subject), (o, Piece::Object)] {
                    if let Some(tail) = rest.strip_prefix(marker) {
                        if !literal.is_empty() {
                            pieces.push(Piece::Literal(std::mem::take(&mut literal)));
                        }
                        match piece {
                            Piece::Subject => subjects += 1,
                            _ => objects += 1,
                        }
                        pieces.push(piece);
                        rest = tail;
                        continue 'scan;
                    }
                }
            }
            let ch = rest.chars().next().expect("non-empty");
            literal.push(ch);
            rest = &rest[ch.len_utf8()..];
        }
        if !literal.is_empty() {
            pieces.push(Piece::Literal(literal));
        }
        if subjects != 1 || objects != 1 {
            return Err(invalid(format!(
                "expected one subject and one object slot, found {subjects} and {objects} in {surface:?}"
            )));
        }
        Ok(RelationTemplate {
            relation_id,
            pieces,
            style,
            cardinality,
        })
    }

    /// The fixed surface of a symbolic style, bound to a relation.
    pub fn symbolic(relation_id: impl Into<String>, style: TemplateStyle) -> Result<Self> {
        let relation_id = relation_id.into();
        let surface = style.symbolic_surface().ok_or_else(|| Error::InvalidTemplate {
            relation: relation_id.clone(),
            reason: "natural-language templates have no fixed surface".into(),
        })?;
        Self::parse(relation_id, surface, style, None)
    }

    pub fn relation_id(&self) -> &str {
        &self.relation_id
    }

    pub fn style(&self) -> TemplateStyle {
        self.style
    }

    pub fn cardinality(&self) -> Option<Cardinality> {
        self.cardinality
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Canonical surface using `[s]` and `[o]`.
    pub fn surface(&self) -> String {
        self.pieces
            .iter()
            .map(|p| match p {
                Piece::Literal(text) => text.as_str(),
                Piece::Subject => "[s]",
                Piece::Object => "[o]",
            })
            .collect()
    }

    /// Same surface and style re-bound to another relation id.
    pub fn with_relation(&self, relation_id: impl Into<String>) -> Self {
        RelationTemplate {
            relation_id: relation_id.into(),
            ..self.clone()
        }
    }
}

pub type Templates = BTreeMap<String, RelationTemplate>;

/// Facts grouped by relation plus the template for each relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    relations: BTreeMap<String, Vec<FactTriple>>,
    templates: Templates,
}

impl Dataset {
    /// Build a dataset, checking that every relation is non-empty and has a template.
    pub fn new(
        name: impl Into<String>,
        relations: BTreeMap<String, Vec<FactTriple>>,
        templates: Templates,
    ) -> Result<Self> {
        for (relation, facts) in &relations {
            if facts.is_empty() {
                return Err(Error::Config(format!("relation {relation} has no facts")));
            }
            if !templates.contains_key(relation) {
                return Err(Error::InvalidTemplate {
                    relation: relation.clone(),
                    reason: "no template".into(),
                });
            }
            if let Some(f) = facts.iter().find(|f| &f.relation_id != relation) {
                return Err(Error::InvalidFact(format!(
                    "fact ({}, {}) filed under {relation}",
                    f.subject, f.relation_id
                )));
            }
        }
        let templates = templates
            .into_iter()
            .filter(|(r, _)| relations.contains_key(r))
            .collect();
        Ok(Dataset {
            name: name.into(),
            relations,
            templates,
        })
    }

    pub fn relations(&self) -> &BTreeMap<String, Vec<FactTriple>> {
        &self.relations
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    pub fn template(&self, relation_id: &str) -> Option<&RelationTemplate> {
        self.templates.get(relation_id)
    }

    pub fn facts(&self) -> impl Iterator<Item = &FactTriple> {
        self.relations.values().flatten()
    }

    pub fn fact_count(&self) -> usize {
        self.relations.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }
}

/// A line that the loader could not use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedLine {
    pub source: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SkipReport {
    pub skipped: Vec<SkippedLine>,
}

impl SkipReport {
    pub fn len(&self) -> usize {
        self.skipped.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skipped.is_empty()
    }

    pub(crate) fn push(&mut self, source: &str, line: usize, reason: impl Into<String>) {
        self.skipped.push(SkippedLine {
            source: source.to_string(),
            line,
            reason: reason.into(),
        });
    }
}

#[derive(Debug, Clone)]
pub struct CorpusLoad {
    pub dataset: Dataset,
    pub skipped: SkipReport,
}

#[derive(Deserialize)]
struct FactRecord {
    sub_label: String,
    obj_label: String,
    predicate_id: String,
}

#[derive(Deserialize)]
struct TemplateRecord {
    relation: String,
    template: String,
    #[serde(rename = "type")]
    kind: Option<String>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Data files of a corpus path: the file itself, or every `*.jsonl` in a
/// directory in name order (the LAMA distribution ships one file per relation).
fn corpus_files(path: &Path) -> Result<Vec<std::path::PathBuf>> {
    if !path.is_dir() {
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            ));
        }
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<_> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

/// Parse fact records from a reader, appending to `relations` in file order.
pub fn parse_facts<R: BufRead>(
    reader: R,
    source: &str,
    relations: &mut BTreeMap<String, Vec<FactTriple>>,
    skipped: &mut SkipReport,
) -> Result<()> {
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let record: FactRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                skipped.push(source, lineno, format!("malformed record: {e}"));
                continue;
            }
        };
        match FactTriple::new(record.sub_label, record.predicate_id, record.obj_label) {
            Ok(fact) => relations
                .entry(fact.relation_id.clone())
                .or_default()
                .push(fact),
            Err(e) => skipped.push(source, lineno, e.to_string()),
        }
    }
    Ok(())
}

/// Load a fact corpus and bind it to its templates.
///
/// Facts whose relation has no template are reported as skipped. When
/// `templates` is `None`, every relation falls back to the `[s] => [o]`
/// symbolic template so that the facts can still be counted and probed.
pub fn load_corpus(path: &Path, name: &str, templates: Option<&Templates>) -> Result<CorpusLoad> {
    let mut relations = BTreeMap::new();
    let mut skipped = SkipReport::default();
    for file in corpus_files(path)? {
        let source = file.display().to_string();
        parse_facts(open(&file)?, &source, &mut relations, &mut skipped)?;
    }

    let templates = match templates {
        Some(t) => {
            relations.retain(|relation, facts: &mut Vec<FactTriple>| {
                if t.contains_key(relation) {
                    return true;
                }
                for _ in facts.iter() {
                    skipped.push(name, 0, format!("no template for relation {relation}"));
                }
                false
            });
            t.clone()
        }
        None => relations
            .keys()
            .map(|r| {
                RelationTemplate::symbolic(r.clone(), TemplateStyle::ArrowDouble)
                    .map(|t| (r.clone(), t))
            })
            .collect::<Result<_>>()?,
    };

    if relations.is_empty() {
        return Err(Error::ZeroFacts(path.display().to_string()));
    }
    Ok(CorpusLoad {
        dataset: Dataset::new(name, relations, templates)?,
        skipped,
    })
}

/// Load a template file (one JSON record per line).
pub fn load_templates(path: &Path) -> Result<Templates> {
    let source = path.display().to_string();
    let mut templates = Templates::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TemplateRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{source}:{}", idx + 1), e))?;
        let cardinality = match record.kind.as_deref() {
            None => None,
            Some(kind) => Some(Cardinality::parse(kind).ok_or_else(|| {
                Error::parse(format!("{source}:{}", idx + 1), format!("unknown type {kind:?}"))
            })?),
        };
        let template = RelationTemplate::parse(
            record.relation.clone(),
            &record.template,
            TemplateStyle::NaturalLanguage,
            cardinality,
        )?;
        templates.insert(record.relation, template);
    }
    Ok(templates)
}

/// Replace every template with the symbolic surface of `style`, keeping cardinality.
pub fn restyle(templates: &Templates, style: TemplateStyle) -> Result<Templates> {
    if style == TemplateStyle::NaturalLanguage {
        return Ok(templates.clone());
    }
    templates
        .iter()
        .map(|(r, t)| {
            let mut symbolic = RelationTemplate::symbolic(r.clone(), style)?;
            symbolic.cardinality = t.cardinality;
            Ok((r.clone(), symbolic))
        })
        .collect()
}

impl Dataset {
    /// The same facts with every template swapped for a symbolic style.
    pub fn restyled(&self, style: TemplateStyle) -> Result<Dataset> {
        Ok(Dataset {
            name: self.name.clone(),
            relations: self.relations.clone(),
            templates: restyle(&self.templates, style)?,
        })
    }
}

/// Token inventory of a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashSet<String>,
    mask_token: String,
    case_sensitive: bool,
}

impl Vocabulary {
    /// Deduplicates `tokens` (first occurrence wins) and adds the mask token if absent.
    pub fn new<I, S>(tokens: I, mask_token: impl Into<String>, case_sensitive: bool) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mask_token = mask_token.into();
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashSet::new(),
            mask_token: mask_token.clone(),
            case_sensitive,
        };
        for token in tokens {
            vocab.insert(token.into());
        }
        vocab.insert(mask_token);
        vocab
    }

    fn key(&self, token: &str) -> String {
        if self.case_sensitive {
            token.to_string()
        } else {
            token.to_lowercase()
        }
    }

    fn insert(&mut self, token: String) {
        if token.is_empty() {
            return;
        }
        if self.index.insert(self.key(&token)) {
            self.tokens.push(token);
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains(&self.key(token))
    }

    pub fn mask_token(&self) -> &str {
        &self.mask_token
    }

    pub fn case_sensitive(&self) -> bool {
        self.case_sensitive
    }

    /// All tokens in insertion order, mask token included.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokens a fill-mask prediction may produce.
    pub fn predictable(&self) -> impl Iterator<Item = &str> {
        self.tokens
            .iter()
            .map(String::as_str)
            .filter(move |t| *t != self.mask_token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Read a vocabulary file, one token per line.
pub fn load_vocabulary(path: &Path, mask_token: &str, case_sensitive: bool) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_vocabulary(&text, mask_token, case_sensitive))
}

pub fn parse_vocabulary(text: &str, mask_token: &str, case_sensitive: bool) -> Vocabulary {
    Vocabulary::new(
        text.lines().map(|l| l.trim_end_matches('\r')).filter(|l| !l.is_empty()),
        mask_token,
        case_sensitive,
    )
}

/// Splits text into model tokens.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FilterCounts {
    pub retained: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub dataset: Dataset,
    pub counts: BTreeMap<String, FilterCounts>,
}

impl FilterOutcome {
    pub fn retained(&self) -> usize {
        self.counts.values().map(|c| c.retained).sum()
    }

    pub fn dropped(&self) -> usize {
        self.counts.values().map(|c| c.dropped).sum()
    }
}

/// True when `text` is exactly one in-vocabulary token.
pub fn is_single_token(text: &str, vocab: &Vocabulary, tokenizer: &dyn Tokenizer) -> bool {
    match tokenizer.tokenize(text).as_slice() {
        [only] => vocab.contains(only) && only != vocab.mask_token(),
        _ => false,
    }
}

/// Keep only facts whose object is a single in-vocabulary token.
pub fn filter_single_token_objects(
    dataset: &Dataset,
    vocab: &Vocabulary,
    tokenizer: &dyn Tokenizer,
) -> FilterOutcome {
    let mut relations = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (relation, facts) in &dataset.relations {
        let kept: Vec<FactTriple> = facts
            .iter()
            .filter(|f| is_single_token(&f.object, vocab, tokenizer))
            .cloned()
            .collect();
        counts.insert(
            relation.clone(),
            FilterCounts {
                retained: kept.len(),
                dropped: facts.len() - kept.len(),
            },
        );
        if !kept.is_empty() {
            relations.insert(relation.clone(), kept);
        }
    }
    let templates = dataset
        .templates
        .iter()
        .filter(|(r, _)| relations.contains_key(*r))
        .map(|(r, t)| (r.clone(), t.clone()))
        .collect();
    FilterOutcome {
        dataset: Dataset {
            name: dataset.name.clone(),
            relations,
            templates,
        },
        counts,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCount {
    pub facts: usize,
    pub relations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsRecord {
    pub name: String,
    pub facts: usize,
    pub relations: usize,
    pub per_relation: BTreeMap<String, usize>,
    /// Keyed by "1-1", "N-1", "N-M"; empty when no cardinality metadata exists.
    pub per_cardinality: BTreeMap<String, ClassCount>,
}

pub fn dataset_stats(dataset: &Dataset) -> StatsRecord {
    let per_relation: BTreeMap<String, usize> = dataset
        .relations
        .iter()
        .map(|(r, f)| (r.clone(), f.len()))
        .collect();
    let mut per_cardinality: BTreeMap<String, ClassCount> = BTreeMap::new();
    for (relation, count) in &per_relation {
        if let Some(c) = dataset.template(relation).and_then(|t| t.cardinality) {
            let entry = per_cardinality.entry(c.as_str().to_string()).or_default();
            entry.facts += count;
            entry.relations += 1;
        }
    }
    StatsRecord {
        name: dataset.name.clone(),
        facts: per_relation.values().sum(),
        relations: per_relation.len(),
        per_relation,
        per_cardinality,
    }
}
