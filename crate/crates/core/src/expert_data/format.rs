//! Line-oriented demonstration file.
//!
//! Every line is `<payload> *<crc32 of payload, 8 lowercase hex>` and ends
//! with `\n`. Lines in order:
//!
//! ```text
//! MAILDEMO <version>
//! meta source=<scripted|human> session=<id> view=<K> channels=<C> actions=<N> features=<F>
//! scores <episodes> <score>...
//! heldout <count> <episode index>...
//! episode <index> <length>                 (once per episode, then its samples)
//! s <frame> <mask> <reward> <terminal> <features>
//! end <episodes> <samples>
//! ```
//!
//! `frame` is the `C x K x K` binary tensor packed LSB-first into bytes and
//! base64-encoded (standard alphabet, padded). `mask` is one `0`/`1` per
//! action. `terminal` is `0` or `1`. `features` is comma-separated. Reals use
//! the shortest representation that parses back to the same `f64`.

use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use super::{DatasetMeta, DemoDataset, Episode, ExpertSample, Source};
use crate::arena::ObservationFrame;
use crate::error::Result;

pub const FORMAT_MAGIC: &str = "MAILDEMO";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("not a demonstration file (missing {FORMAT_MAGIC} header)")]
    BadMagic,

    #[error("unsupported demonstration format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("demonstration file truncated at byte {offset}")]
    Truncated { offset: u64 },

    #[error("checksum mismatch on line {line} (byte {offset})")]
    Checksum { line: usize, offset: u64 },

    #[error("malformed line {line} (byte {offset}): {reason}")]
    Malformed {
        line: usize,
        offset: u64,
        reason: String,
    },

    #[error("empty dataset: {0}")]
    Empty(String),
}

fn push_line(out: &mut String, payload: &str) {
    let crc = crc32fast::hash(payload.as_bytes());
    out.push_str(payload);
    out.push_str(&format!(" *{crc:08x}\n"));
}

fn pack_bits(cells: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; cells.len().div_ceil(8)];
    for (i, &c) in cells.iter().enumerate() {
        if c != 0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Option<Vec<u8>> {
    if bytes.len() != n.div_ceil(8) {
        return None;
    }
    Some((0..n).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect())
}

fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>, sep: &str) -> String {
    items
        .into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

impl DemoDataset {
    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let mut out = String::new();
        push_line(&mut out, &format!("{FORMAT_MAGIC} {FORMAT_VERSION}"));
        push_line(
            &mut out,
            &format!(
                "meta source={} session={} view={} channels={} actions={} features={}",
                m.source.as_str(),
                m.session,
                m.view,
                m.channels,
                m.n_actions,
                m.n_features
            ),
        );
        let scores = self.scores();
        let mut line = format!("scores {}", scores.len());
        for s in &scores {
            line.push_str(&format!(" {s}"));
        }
        push_line(&mut out, &line);
        let mut line = format!("heldout {}", self.heldout.len());
        for h in &self.heldout {
            line.push_str(&format!(" {h}"));
        }
        push_line(&mut out, &line);
        for (e, ep) in self.episodes.iter().enumerate() {
            push_line(&mut out, &format!("episode {e} {}", ep.samples.len()));
            for s in &ep.samples {
                push_line(
                    &mut out,
                    &format!(
                        "s {} {} {} {} {}",
                        B64.encode(pack_bits(&s.frame.cells)),
                        s.mask,
                        s.reward,
                        s.terminal as u8,
                        join(&s.features, ",")
                    ),
                );
            }
        }
        push_line(
            &mut out,
            &format!("end {} {}", self.episodes.len(), self.n_samples()),
        );
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(self.to_text().as_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self::from_bytes(&bytes)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, DatasetError> {
        Reader::new(bytes).read()
    }
}

struct Line<'a> {
    number: usize,
    offset: u64,
    fields: Vec<&'a str>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    number: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self {
            bytes,
            pos: 0,
            number: 0,
        }
    }

    /// Next complete, checksum-verified line.
    fn next(&mut self) -> std::result::Result<Line<'a>, DatasetError> {
        let offset = self.pos as u64;
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(DatasetError::Truncated { offset })?;
        self.number += 1;
        let number = self.number;
        self.pos += end + 1;
        let malformed = |reason: &str| DatasetError::Malformed {
            line: number,
            offset,
            reason: reason.into(),
        };
        let text = std::str::from_utf8(&rest[..end]).map_err(|_| malformed("not UTF-8"))?;
        let (payload, crc) = text
            .rsplit_once(" *")
            .ok_or_else(|| malformed("missing checksum"))?;
        // the header is inspected before its checksum so version errors stay distinct
        if number == 1 {
            let mut f = payload.split(' ');
            if f.next() != Some(FORMAT_MAGIC) {
                return Err(DatasetError::BadMagic);
            }
            let found: u32 = f
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| malformed("missing version"))?;
            if found != FORMAT_VERSION {
                return Err(DatasetError::Version {
                    found,
                    expected: FORMAT_VERSION,
                });
            }
        }
        let crc = u32::from_str_radix(crc, 16).map_err(|_| malformed("bad checksum field"))?;
        if crc != crc32fast::hash(payload.as_bytes()) {
            return Err(DatasetError::Checksum {
                line: number,
                offset,
            });
        }
        Ok(Line {
            number,
            offset,
            fields: payload.split(' ').collect(),
        })
    }

    fn read(mut self) -> std::result::Result<DemoDataset, DatasetError> {
        let bad = |l: &Line, reason: String| DatasetError::Malformed {
            line: l.number,
            offset: l.offset,
            reason,
        };
        self.next()?;

        let l = self.next()?;
        if l.fields.first() != Some(&"meta") {
            return Err(bad(&l, "expected meta line".into()));
        }
        let get = |key: &str| -> std::result::Result<&str, DatasetError> {
            l.fields
                .iter()
                .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| bad(&l, format!("meta field `{key}` missing")))
        };
        let num = |key: &str| -> std::result::Result<usize, DatasetError> {
            get(key)?
                .parse()
                .map_err(|_| bad(&l, format!("meta field `{key}` is not a count")))
        };
        let meta = DatasetMeta {
            source: match get("source")? {
                "scripted" => Source::Scripted,
                "human" => Source::Human,
                other => return Err(bad(&l, format!("unknown source `{other}`"))),
            },
            session: get("session")?.to_string(),
            view: num("view")?,
            channels: num("channels")?,
            n_actions: num("actions")?,
            n_features: num("features")?,
        };
        let frame_len = meta.channels * meta.view * meta.view;

        let l = self.next()?;
        let scores = parse_list::<f64>(&l, "scores").map_err(|r| bad(&l, r))?;
        let l = self.next()?;
        let heldout = parse_list::<usize>(&l, "heldout").map_err(|r| bad(&l, r))?;

        let mut episodes: Vec<Episode> = Vec::with_capacity(scores.len());
        loop {
            let l = self.next()?;
            match l.fields.first().copied() {
                Some("episode") => {
                    let len: usize = l
                        .fields
                        .get(2)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(&l, "episode length".into()))?;
                    let index: usize = l
                        .fields
                        .get(1)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(&l, "episode index".into()))?;
                    if index != episodes.len() {
                        return Err(bad(&l, format!("episode {index} out of order")));
                    }
                    let mut samples = Vec::with_capacity(len);
                    for _ in 0..len {
                        let s = self.next()?;
                        samples.push(parse_sample(&s, &meta, frame_len).map_err(|r| bad(&s, r))?);
                    }
                    let score = *scores
                        .get(index)
                        .ok_or_else(|| bad(&l, "more episodes than scores".into()))?;
                    episodes.push(Episode { samples, score });
                }
                Some("end") => {
                    let n: Vec<usize> = l.fields[1..]
                        .iter()
                        .filter_map(|v| v.parse().ok())
                        .collect();
                    let total: usize = episodes.iter().map(|e| e.samples.len()).sum();
                    if n != [episodes.len(), total] || episodes.len() != scores.len() {
                        return Err(bad(&l, "footer counts disagree with contents".into()));
                    }
                    break;
                }
                _ => return Err(bad(&l, "expected episode or end line".into())),
            }
        }
        if heldout.iter().any(|&h| h >= episodes.len()) || !heldout.windows(2).all(|w| w[0] < w[1])
        {
            return Err(DatasetError::Malformed {
                line: 4,
                offset: 0,
                reason: "held-out indices must be sorted, unique and in range".into(),
            });
        }
        Ok(DemoDataset {
            meta,
            episodes,
            heldout,
        })
    }
}

fn parse_list<T: std::str::FromStr>(l: &Line, tag: &str) -> std::result::Result<Vec<T>, String> {
    if l.fields.first() != Some(&tag) {
        return Err(format!("expected {tag} line"));
    }
    let count: usize = l
        .fields
        .get(1)
        .and_then(|v| v.parse().ok())
        .ok_or("missing count")?;
    let items: Vec<T> = l.fields[2..]
        .iter()
        .map(|v| v.parse().map_err(|_| format!("bad {tag} entry `{v}`")))
        .collect::<std::result::Result<_, _>>()?;
    if items.len() != count {
        return Err(format!("{tag} count {count} but {} entries", items.len()));
    }
    Ok(items)
}

fn parse_sample(
    l: &Line,
    meta: &DatasetMeta,
    frame_len: usize,
) -> std::result::Result<ExpertSample, String> {
    let f = &l.fields;
    if f.len() != 6 || f[0] != "s" {
        return Err("expected sample line".into());
    }
    let packed = B64
        .decode(f[1])
        .map_err(|e| format!("frame encoding: {e}"))?;
    let cells = unpack_bits(&packed, frame_len).ok_or("frame has the wrong size")?;
    let mask: crate::policy::ActionMask = f[2].parse().map_err(|_| "bad mask")?;
    if mask.len() != meta.n_actions {
        return Err(format!(
            "mask has {} actions, expected {}",
            mask.len(),
            meta.n_actions
        ));
    }
    let reward: f64 = f[3].parse().map_err(|_| "bad reward")?;
    let terminal = match f[4] {
        "0" => false,
        "1" => true,
        _ => return Err("bad terminal flag".into()),
    };
    let features: Vec<f64> = f[5]
        .split(',')
        .map(|v| v.parse().map_err(|_| "bad feature"))
        .collect::<std::result::Result<_, _>>()?;
    if features.len() != meta.n_features {
        return Err("wrong number of features".into());
    }
    let mut fixed = [0.0; 2];
    for (d, s) in fixed.iter_mut().zip(&features) {
        *d = *s;
    }
    Ok(ExpertSample {
        frame: ObservationFrame {
            view: meta.view,
            cells,
            features: fixed,
        },
        features,
        mask,
        reward,
        terminal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_packing_roundtrip() {
        let cells: Vec<u8> = (0..37).map(|i| (i % 3 == 0) as u8).collect();
        assert_eq!(unpack_bits(&pack_bits(&cells), 37).unwrap(), cells);
        assert!(unpack_bits(&[0u8; 3], 37).is_none());
    }
}
