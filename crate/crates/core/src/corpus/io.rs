//! JSON-lines landmark corpus files.
//!
//! The first non-blank line is a header naming the alphabet version:
//!
//! ```text
//! {"format":"cued-landmarks","version":1,"alphabet":"v1"}
//! {"id":"s0000_r0","text":"...","words":[...],"phonemes":["a","b"],"frames":[{"lips":[..84..],"hand":[..42..],"fingertip":[x,y]}, ...]}
//! ```
//!
//! A frame may omit `fingertip`; it is then read from the hand landmark named
//! by the utterance's optional `fingertip_landmark` field (default 8).

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{
    AlphabetVersion, CuedFrame, PhonemeAlphabet, Utterance, DEFAULT_FINGERTIP_LANDMARK,
    HAND_POINTS,
};
use crate::error::{Error, Result};

const FORMAT_TAG: &str = "cued-landmarks";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub alphabet: AlphabetVersion,
}

impl CorpusHeader {
    fn new(alphabet: AlphabetVersion) -> Self {
        CorpusHeader {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            alphabet,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    lips: Vec<f64>,
    hand: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fingertip: Option<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    id: String,
    text: String,
    words: Vec<String>,
    phonemes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fingertip_landmark: Option<usize>,
    frames: Vec<FrameRecord>,
}

/// Writes `utterances` with a header for `alphabet`.
pub fn write_corpus(
    path: impl AsRef<Path>,
    alphabet: &PhonemeAlphabet,
    utterances: &[Utterance],
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write_line = |out: &mut BufWriter<File>, line: String| -> Result<()> {
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    let header = serde_json::to_string(&CorpusHeader::new(alphabet.version()))
        .expect("header serializes");
    write_line(&mut out, header)?;
    for utt in utterances {
        let record = UtteranceRecord {
            id: utt.id.clone(),
            text: utt.text.clone(),
            words: utt.words.clone(),
            phonemes: alphabet.labels(&utt.phonemes),
            fingertip_landmark: None,
            frames: utt
                .frames
                .iter()
                .map(|f| FrameRecord {
                    lips: f.lips.clone(),
                    hand: f.hand.clone(),
                    fingertip: Some(f.fingertip),
                })
                .collect(),
        };
        let line = serde_json::to_string(&record).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        write_line(&mut out, line)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads only the header line. Returns `None` for an empty file.
pub fn read_corpus_header(path: impl AsRef<Path>) -> Result<Option<CorpusHeader>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        return parse_header(path, n + 1, &line).map(Some);
    }
    Ok(None)
}

fn parse_header(path: &Path, line_no: usize, line: &str) -> Result<CorpusHeader> {
    let header: CorpusHeader = serde_json::from_str(line).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message: format!("bad corpus header: {e}"),
    })?;
    if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!(
                "unsupported corpus format {:?} version {}",
                header.format, header.version
            ),
        });
    }
    Ok(header)
}

/// Loads every utterance in file order, validating landmark counts, labels and
/// coordinates against `alphabet`.
pub fn load_corpus(path: impl AsRef<Path>, alphabet: &PhonemeAlphabet) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header_seen = false;
    let mut utterances = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            let header = parse_header(path, line_no, &line)?;
            if header.alphabet != alphabet.version() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!(
                        "corpus uses alphabet {} but {} was requested",
                        header.alphabet,
                        alphabet.version()
                    ),
                });
            }
            header_seen = true;
            continue;
        }
        let record: UtteranceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        utterances.push(record_to_utterance(path, line_no, record, alphabet)?);
    }
    Ok(utterances)
}

fn record_to_utterance(
    path: &Path,
    line_no: usize,
    record: UtteranceRecord,
    alphabet: &PhonemeAlphabet,
) -> Result<Utterance> {
    let phonemes = alphabet
        .parse_labels(&record.phonemes)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("utterance {}: {e}", record.id),
        })?;
    let landmark = record
        .fingertip_landmark
        .unwrap_or(DEFAULT_FINGERTIP_LANDMARK);
    if landmark >= HAND_POINTS {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!(
                "utterance {}: fingertip_landmark {landmark} out of range",
                record.id
            ),
        });
    }
    let mut frames = Vec::with_capacity(record.frames.len());
    for (frame_index, f) in record.frames.into_iter().enumerate() {
        let fingertip = match f.fingertip {
            Some(tip) => tip,
            None if f.hand.len() > 2 * landmark + 1 => [f.hand[2 * landmark], f.hand[2 * landmark + 1]],
            None => [f64::NAN, f64::NAN],
        };
        let frame = CuedFrame {
            frame_index,
            lips: f.lips,
            hand: f.hand,
            fingertip,
        };
        frame.validate(&record.id)?;
        frames.push(frame);
    }
    let utt = Utterance {
        id: record.id,
        text: record.text,
        words: record.words,
        phonemes,
        frames,
    };
    utt.validate(alphabet)?;
    Ok(utt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{alphabet, LIP_POINTS};

    fn frame_json(lips: usize, hand: usize) -> String {
        let lips = vec!["0.5"; lips].join(",");
        let hand = vec!["0.25"; hand].join(",");
        format!(r#"{{"lips":[{lips}],"hand":[{hand}],"fingertip":[0.1,0.2]}}"#)
    }

    fn write_tmp(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    const HEADER: &str = r#"{"format":"cued-landmarks","version":1,"alphabet":"v1"}"#;

    #[test]
    fn loads_single_utterance() {
        let frames = vec![frame_json(84, 42); 10].join(",");
        let f = write_tmp(&[
            HEADER.to_string(),
            format!(
                r#"{{"id":"u1","text":"ab","words":["ab"],"phonemes":["a","b"],"frames":[{frames}]}}"#
            ),
        ]);
        let a = alphabet(AlphabetVersion::V1);
        let utts = load_corpus(f.path(), &a).unwrap();
        assert_eq!(utts.len(), 1);
        assert_eq!(utts[0].frames.len(), 10);
        assert_eq!(utts[0].phonemes, vec![0, a.index_of("b").unwrap()]);
        assert_eq!(utts[0].frames[3].frame_index, 3);
        assert_eq!(utts[0].frames[0].lips.len(), 2 * LIP_POINTS);
    }

    #[test]
    fn unknown_label_is_rejected() {
        let frames = vec![frame_json(84, 42); 3].join(",");
        let f = write_tmp(&[
            HEADER.to_string(),
            format!(
                r#"{{"id":"u1","text":"t","words":["t"],"phonemes":["a","zz"],"frames":[{frames}]}}"#
            ),
        ]);
        let err = load_corpus(f.path(), &alphabet(AlphabetVersion::V1)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown phoneme"), "{msg}");
        assert!(msg.contains("zz"), "{msg}");
    }

    #[test]
    fn wrong_landmark_count_names_utterance_and_frame() {
        let frames = [frame_json(84, 42), frame_json(84, 42), frame_json(82, 42)].join(",");
        let f = write_tmp(&[
            HEADER.to_string(),
            format!(
                r#"{{"id":"bad-utt","text":"t","words":["t"],"phonemes":["a"],"frames":[{frames}]}}"#
            ),
        ]);
        let err = load_corpus(f.path(), &alphabet(AlphabetVersion::V1)).unwrap_err();
        match err {
            Error::MalformedFrame {
                utterance, frame, ..
            } => {
                assert_eq!(utterance, "bad-utt");
                assert_eq!(frame, 2);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let f = write_tmp(&[]);
        let utts = load_corpus(f.path(), &alphabet(AlphabetVersion::V1)).unwrap();
        assert!(utts.is_empty());
        assert!(read_corpus_header(f.path()).unwrap().is_none());
    }

    #[test]
    fn alphabet_mismatch_is_rejected() {
        let f = write_tmp(&[HEADER.to_string()]);
        assert!(load_corpus(f.path(), &alphabet(AlphabetVersion::V2)).is_err());
    }

    #[test]
    fn missing_fingertip_falls_back_to_landmark() {
        let mut hand: Vec<String> = (0..42).map(|i| format!("{}", i as f64 / 100.0)).collect();
        hand[2 * 12] = "0.77".into();
        hand[2 * 12 + 1] = "0.88".into();
        let lips = vec!["0.5"; 84].join(",");
        let frame = format!(r#"{{"lips":[{lips}],"hand":[{}]}}"#, hand.join(","));
        let f = write_tmp(&[
            HEADER.to_string(),
            format!(
                r#"{{"id":"u","text":"t","words":["t"],"phonemes":["a"],"fingertip_landmark":12,"frames":[{frame}]}}"#
            ),
        ]);
        let utts = load_corpus(f.path(), &alphabet(AlphabetVersion::V1)).unwrap();
        assert_eq!(utts[0].frames[0].fingertip, [0.77, 0.88]);
    }
}
