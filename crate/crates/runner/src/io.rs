//! Readers and writers for every on-disk format the runner touches.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ptdebias_core::benchmark::{
    validate_bios, Activity, ArticleRule, BiasNliInstance, BiasStsbUnit, BiosRecord, ClassSet,
    RawBiosRecord,
};
use ptdebias_core::lexicon::{BiasLexicon, CounterfactualExample, Label, LabeledText, TextUnit};
use ptdebias_core::metrics::NliLabel;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::hex_digest;
use crate::error::{IoContext, Result, RunnerError};

fn parse_err(path: &Path, message: impl Into<String>) -> RunnerError {
    RunnerError::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn load_lexicon(path: &Path) -> Result<BiasLexicon> {
    let text = std::fs::read_to_string(path).at(path)?;
    BiasLexicon::parse(&text).map_err(|e| parse_err(path, e.to_string()))
}

/// The configured lexicon (or the built-in one) and the digest of its
/// canonical form.
pub fn lexicon_or_default(path: Option<&Path>) -> Result<(BiasLexicon, String)> {
    let lex = match path {
        Some(p) => load_lexicon(p)?,
        None => BiasLexicon::default_gender(),
    };
    let digest = hex_digest(lex.to_canonical_string().as_bytes());
    Ok((lex, digest))
}

/// Non-empty, non-comment lines, trimmed.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).at(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// `verb<TAB>object` per line.
pub fn read_activities(path: &Path) -> Result<Vec<Activity>> {
    read_lines(path)?
        .into_iter()
        .map(|line| {
            let (verb, object) = line
                .split_once('\t')
                .or_else(|| line.rsplit_once(' '))
                .ok_or_else(|| parse_err(path, format!("expected `verb<TAB>object`, got `{line}`")))?;
            Ok(Activity::new(verb.trim(), object.trim()))
        })
        .collect()
}

pub fn load_article_rule(path: Option<&Path>) -> Result<ArticleRule> {
    match path {
        None => Ok(ArticleRule::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p).at(p)?;
            ArticleRule::parse_exceptions(&text).map_err(|e| parse_err(p, e.to_string()))
        }
    }
}

pub fn load_classes(path: Option<&Path>) -> Result<ClassSet> {
    match path {
        None => Ok(ClassSet::bios()),
        Some(p) => Ok(ClassSet::new(read_lines(p)?)),
    }
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).at(path)?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(file))
}

fn tsv_writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    let file = File::create(path).at(path)?;
    Ok(csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(file))
}

#[derive(Deserialize)]
struct StsbRow {
    sentence1: String,
    sentence2: String,
    score: f64,
}

/// Sentence-similarity TSV with a header naming `sentence1`, `sentence2`
/// and `score` (other columns ignored, so GLUE files load as-is).
pub fn load_stsb(path: &Path) -> Result<Vec<LabeledText>> {
    let mut rdr = tsv_reader(path)?;
    rdr.deserialize::<StsbRow>()
        .map(|row| {
            let r = row.map_err(|e| parse_err(path, e.to_string()))?;
            Ok(LabeledText::new(TextUnit::pair(r.sentence1, r.sentence2), Label::Score(r.score)))
        })
        .collect()
}

#[derive(Deserialize)]
struct NliRow {
    sentence1: String,
    sentence2: String,
    gold_label: String,
}

pub fn nli_label(name: &str) -> Option<NliLabel> {
    match name {
        "entailment" => Some(NliLabel::Entailment),
        "neutral" => Some(NliLabel::Neutral),
        "contradiction" => Some(NliLabel::Contradiction),
        _ => None,
    }
}

/// Entailment TSV with `gold_label`, `sentence1`, `sentence2` columns; rows
/// without a gold label (`-`) are skipped.
pub fn load_snli(path: &Path) -> Result<Vec<LabeledText>> {
    let mut rdr = tsv_reader(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<NliRow>() {
        let r = row.map_err(|e| parse_err(path, e.to_string()))?;
        if r.gold_label == "-" {
            continue;
        }
        let label = nli_label(&r.gold_label)
            .ok_or_else(|| parse_err(path, format!("unknown label `{}`", r.gold_label)))?;
        out.push(LabeledText::new(
            TextUnit::pair(r.sentence1, r.sentence2),
            Label::Class(label.index()),
        ));
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).at(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<usize> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    let mut w = BufWriter::new(File::create(path).at(path)?);
    let mut n = 0;
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").at(path)?;
        n += 1;
    }
    w.flush().at(path)?;
    Ok(n)
}

/// One JSON object per line with `text`, `profession` and `gender`.
pub fn load_bios(path: &Path, classes: &ClassSet) -> Result<Vec<BiosRecord>> {
    let raw: Vec<RawBiosRecord> = read_jsonl(path)?;
    let records = validate_bios(raw, classes).map_err(|e| parse_err(path, e.to_string()))?;
    log::info!("{}: {} bios records", path.display(), records.len());
    Ok(records)
}

pub fn bios_as_labeled(records: &[BiosRecord], classes: &ClassSet) -> Vec<LabeledText> {
    records
        .iter()
        .map(|r| LabeledText::new(TextUnit::single(r.text.clone()), Label::Class(r.class_id(classes))))
        .collect()
}

/// Counterfactual pairs as written by `augment`.
pub fn load_pairs(path: &Path) -> Result<Vec<CounterfactualExample>> {
    read_jsonl(path)
}

#[derive(Serialize, Deserialize)]
struct StsbCorpusRow {
    unit_id: usize,
    template_id: usize,
    profession: String,
    sent_m: String,
    sent_f: String,
    sent_shared: String,
}

pub fn write_stsb_corpus(path: &Path, units: &[BiasStsbUnit]) -> Result<()> {
    let mut w = tsv_writer(path)?;
    for u in units {
        w.serialize(StsbCorpusRow {
            unit_id: u.unit_id,
            template_id: u.template_id,
            profession: u.profession.clone(),
            sent_m: u.pair_male.0.clone(),
            sent_f: u.pair_female.0.clone(),
            sent_shared: u.pair_male.1.clone(),
        })
        .map_err(|e| parse_err(path, e.to_string()))?;
    }
    w.flush().at(path)
}

pub fn read_stsb_corpus(path: &Path) -> Result<Vec<BiasStsbUnit>> {
    let mut rdr = tsv_reader(path)?;
    rdr.deserialize::<StsbCorpusRow>()
        .map(|row| {
            let r = row.map_err(|e| parse_err(path, e.to_string()))?;
            Ok(BiasStsbUnit {
                unit_id: r.unit_id,
                template_id: r.template_id,
                profession: r.profession,
                pair_male: (r.sent_m, r.sent_shared.clone()),
                pair_female: (r.sent_f, r.sent_shared),
            })
        })
        .collect()
}

pub fn write_nli_corpus(path: &Path, instances: impl IntoIterator<Item = BiasNliInstance>) -> Result<usize> {
    let mut w = tsv_writer(path)?;
    let mut n = 0;
    for inst in instances {
        w.serialize(&inst).map_err(|e| parse_err(path, e.to_string()))?;
        n += 1;
    }
    w.flush().at(path)?;
    Ok(n)
}

pub fn read_nli_corpus(path: &Path) -> Result<Vec<BiasNliInstance>> {
    let mut rdr = tsv_reader(path)?;
    rdr.deserialize()
        .map(|row| row.map_err(|e| parse_err(path, e.to_string())))
        .collect()
}

/// Tab-separated prediction rows: an instance id followed by numbers.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(File::open(path).at(path)?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        let mut fields = rec.iter();
        let Some(id) = fields.next() else { continue };
        let values = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>();
        match values {
            Ok(v) => out.push((id.to_string(), v)),
            // a header row
            Err(_) if out.is_empty() => continue,
            Err(e) => return Err(parse_err(path, format!("row `{id}`: {e}"))),
        }
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).at(path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).at(path)?;
    serde_json::from_slice(&bytes).map_err(|e| parse_err(path, e.to_string()))
}
