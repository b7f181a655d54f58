use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, CorpusError, DialogueSample, Transcript, Utterance};

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    speaker: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct TranscriptRecord {
    id: String,
    turns: Vec<TurnRecord>,
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn create(path: &Path) -> Result<BufWriter<File>, CorpusError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parses line-delimited transcript records. Blank lines are skipped.
pub fn read_transcripts<R: BufRead>(reader: R) -> Result<Vec<Transcript>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TranscriptRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
        let tr = Transcript {
            id: rec.id,
            turns: rec
                .turns
                .into_iter()
                .map(|t| Utterance::new(t.speaker, tokenize(&t.text)))
                .collect(),
        };
        tr.validate().map_err(|message| CorpusError::Schema {
            line: lineno,
            id: tr.id.clone(),
            message,
        })?;
        out.push(tr);
    }
    Ok(out)
}

pub fn load_transcripts(path: &Path) -> Result<Vec<Transcript>, CorpusError> {
    read_transcripts(open(path)?)
}

pub fn write_transcripts(path: &Path, transcripts: &[Transcript]) -> Result<(), CorpusError> {
    let mut w = create(path)?;
    for t in transcripts {
        let rec = TranscriptRecord {
            id: t.id.clone(),
            turns: t
                .turns
                .iter()
                .map(|u| TurnRecord {
                    speaker: u.speaker.clone(),
                    text: u.text(),
                })
                .collect(),
        };
        let line = serde_json::to_string(&rec).expect("records serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn load_samples(path: &Path) -> Result<Vec<DialogueSample>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: DialogueSample = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        s.validate().map_err(|message| CorpusError::Schema {
            line: lineno,
            id: s.id.clone(),
            message,
        })?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_samples(path: &Path, samples: &[DialogueSample]) -> Result<(), CorpusError> {
    let mut w = create(path)?;
    for s in samples {
        let line = serde_json::to_string(s).expect("samples serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
