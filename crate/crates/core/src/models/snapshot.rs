//! Model snapshot file: a text dump of every parameter.
//!
//! ```text
//! #n2rec-model-v1 kind=<kind> d=<int> M=<int> Q=<int> jtll=<on|off> seed=<int>
//! @matrix <name> <rows> <cols>
//! <cols tab-separated values>          (rows lines)
//! @top <n>
//! <poi><TAB><count>                   (n lines)
//! @utop <n>
//! <user><TAB><poi><TAB><count>        (n lines)
//! #end
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so save followed
//! by load reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ids::PoiId;
use crate::models::{Gru, Model, ModelKind, Popularity, SeqRec, SharedParams, UserPopularity};
use crate::optim::EmbeddingMatrix;

pub const SNAPSHOT_VERSION: &str = "#n2rec-model-v1";

/// Provenance stored in the snapshot header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotMeta {
    pub jtll: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub model: Model,
    pub params: SharedParams,
    pub meta: SnapshotMeta,
}

pub fn save_snapshot(snapshot: &Snapshot, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, snapshot.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Snapshot> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Snapshot::from_text(&text)
}

fn write_matrix(out: &mut String, name: &str, m: &EmbeddingMatrix) {
    let _ = writeln!(out, "@matrix {name} {} {}", m.rows(), m.dim());
    for r in 0..m.rows() {
        let row = m.row(r);
        for (i, v) in row.iter().enumerate() {
            let sep = if i + 1 == row.len() { '\n' } else { '\t' };
            let _ = write!(out, "{v:e}{sep}");
        }
    }
}

impl Snapshot {
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{SNAPSHOT_VERSION} kind={} d={} M={} Q={} jtll={} seed={}",
            self.model.kind(),
            p.dim(),
            p.num_users(),
            p.num_pois(),
            if self.meta.jtll { "on" } else { "off" },
            self.meta.seed
        );
        write_matrix(&mut out, "W_user", &p.user);
        write_matrix(&mut out, "W_poi", &p.poi);
        for (name, m) in self.model.extra_matrices() {
            write_matrix(&mut out, name, m);
        }
        match &self.model {
            Model::Top(top) => {
                let _ = writeln!(out, "@top {}", top.counts.len());
                for (i, c) in top.counts.iter().enumerate() {
                    let _ = writeln!(out, "{i}\t{c}");
                }
            }
            Model::UTop(utop) => {
                let n: usize = utop.counts.iter().map(BTreeMap::len).sum();
                let _ = writeln!(out, "@utop {n}");
                for (u, m) in utop.counts.iter().enumerate() {
                    for (poi, c) in m {
                        let _ = writeln!(out, "{u}\t{poi}\t{c}");
                    }
                }
            }
            _ => {}
        }
        out.push_str("#end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
        let (_, header) = lines.next().ok_or(Error::Format {
            line: 1,
            msg: "empty snapshot".into(),
        })?;
        let mut tokens = header.split_whitespace();
        let version = tokens.next().unwrap_or("");
        if version != SNAPSHOT_VERSION {
            return Err(Error::Version {
                found: version.into(),
                expected: SNAPSHOT_VERSION,
            });
        }
        let fields: BTreeMap<&str, &str> = tokens.filter_map(|t| t.split_once('=')).collect();
        let field = |k: &str| {
            fields.get(k).copied().ok_or_else(|| Error::Format {
                line: 1,
                msg: format!("header lacks {k}="),
            })
        };
        let num = |k: &str| -> Result<usize> {
            field(k)?.parse().map_err(|_| Error::Format {
                line: 1,
                msg: format!("bad {k}"),
            })
        };
        let kind: ModelKind = field("kind")?.parse()?;
        let (dim, num_users, num_pois) = (num("d")?, num("M")?, num("Q")?);
        let jtll = match field("jtll")? {
            "on" => true,
            "off" => false,
            other => {
                return Err(Error::Format {
                    line: 1,
                    msg: format!("bad jtll flag {other:?}"),
                })
            }
        };
        let seed: u64 = field("seed")?.parse().map_err(|_| Error::Format {
            line: 1,
            msg: "bad seed".into(),
        })?;

        let mut matrices: BTreeMap<String, EmbeddingMatrix> = BTreeMap::new();
        let mut top: Option<Vec<u64>> = None;
        let mut utop: Option<Vec<BTreeMap<PoiId, u64>>> = None;
        let mut ended = false;

        while let Some((line_no, line)) = lines.next() {
            let fail = |msg: String| Error::Format { line: line_no, msg };
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("#end") => {
                    ended = true;
                    break;
                }
                Some("@matrix") => {
                    let name = parts.next().ok_or_else(|| fail("matrix without name".into()))?;
                    let rows: usize = parse_tok(parts.next(), line_no)?;
                    let cols: usize = parse_tok(parts.next(), line_no)?;
                    let mut values = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (n, row) = lines.next().ok_or_else(|| fail(format!("matrix {name} truncated")))?;
                        let before = values.len();
                        for v in row.split('\t') {
                            values.push(v.parse::<f64>().map_err(|_| Error::Format {
                                line: n,
                                msg: format!("bad value {v:?}"),
                            })?);
                        }
                        if values.len() - before != cols {
                            return Err(Error::Format {
                                line: n,
                                msg: format!("expected {cols} values"),
                            });
                        }
                    }
                    if values.iter().any(|v| !v.is_finite()) {
                        return Err(fail(format!("matrix {name} has non-finite values")));
                    }
                    matrices.insert(name.to_string(), EmbeddingMatrix::from_vec(rows, cols, values)?);
                }
                Some("@top") => {
                    let n: usize = parse_tok(parts.next(), line_no)?;
                    let mut counts = vec![0u64; num_pois];
                    for _ in 0..n {
                        let (n, row) = lines.next().ok_or_else(|| fail("@top truncated".into()))?;
                        let mut it = row.split('\t');
                        let poi: usize = parse_tok(it.next(), n)?;
                        let c: u64 = parse_tok(it.next(), n)?;
                        *counts.get_mut(poi).ok_or_else(|| Error::Format {
                            line: n,
                            msg: format!("POI {poi} out of range"),
                        })? = c;
                    }
                    top = Some(counts);
                }
                Some("@utop") => {
                    let n: usize = parse_tok(parts.next(), line_no)?;
                    let mut counts = vec![BTreeMap::new(); num_users];
                    for _ in 0..n {
                        let (n, row) = lines.next().ok_or_else(|| fail("@utop truncated".into()))?;
                        let mut it = row.split('\t');
                        let user: usize = parse_tok(it.next(), n)?;
                        let poi: u32 = parse_tok(it.next(), n)?;
                        let c: u64 = parse_tok(it.next(), n)?;
                        if user >= num_users || poi as usize >= num_pois {
                            return Err(Error::Format {
                                line: n,
                                msg: "id out of range".into(),
                            });
                        }
                        counts[user].insert(PoiId(poi), c);
                    }
                    utop = Some(counts);
                }
                _ => return Err(fail(format!("unexpected line {line:?}"))),
            }
        }
        if !ended {
            return Err(Error::Format {
                line: text.lines().count(),
                msg: "snapshot truncated (no #end)".into(),
            });
        }

        let mut take = |name: &str, rows: usize, cols: usize| -> Result<EmbeddingMatrix> {
            let m = matrices.remove(name).ok_or_else(|| Error::Format {
                line: 0,
                msg: format!("missing matrix {name}"),
            })?;
            if m.rows() != rows || m.dim() != cols {
                return Err(Error::DimensionMismatch {
                    expected: rows * cols,
                    found: m.rows() * m.dim(),
                });
            }
            Ok(m)
        };
        let params = SharedParams {
            user: take("W_user", num_users, dim)?,
            poi: take("W_poi", num_pois, dim)?,
        };
        let model = match kind {
            ModelKind::Top => Model::Top(Popularity {
                counts: top.ok_or_else(|| Error::Format {
                    line: 0,
                    msg: "missing @top table".into(),
                })?,
            }),
            ModelKind::UTop => Model::UTop(UserPopularity {
                counts: utop.ok_or_else(|| Error::Format {
                    line: 0,
                    msg: "missing @utop table".into(),
                })?,
            }),
            ModelKind::Mf => Model::Mf,
            ModelKind::SeqRec => Model::SeqRec(SeqRec {
                transition: take("T", num_pois, dim)?,
            }),
            ModelKind::Gru => {
                let mut g = Gru::zeros(dim);
                for (name, m) in g.matrices_mut() {
                    *m = take(name, m.rows(), m.dim())?;
                }
                Model::Gru(g)
            }
        };
        Ok(Snapshot {
            model,
            params,
            meta: SnapshotMeta { jtll, seed },
        })
    }
}

fn parse_tok<T: std::str::FromStr>(tok: Option<&str>, line: usize) -> Result<T> {
    tok.and_then(|t| t.trim().parse().ok()).ok_or_else(|| Error::Format {
        line,
        msg: "missing or malformed number".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn snapshot(kind: ModelKind, seed: u64) -> Snapshot {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = SharedParams::init(3, 4, 5, &mut rng);
        params.user.values_mut()[0] = 1e-300;
        params.poi.values_mut()[1] = -0.0;
        let mut model = Model::new(kind, 3, 4, 5, &mut rng);
        match &mut model {
            Model::Top(t) => t.counts = vec![3, 0, 7, 1],
            Model::UTop(u) => {
                u.counts[0].insert(PoiId(2), 4);
                u.counts[2].insert(PoiId(0), 1);
            }
            _ => {}
        }
        Snapshot {
            model,
            params,
            meta: SnapshotMeta { jtll: seed % 2 == 0, seed },
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(seed in any::<u64>(), k in 0usize..5) {
            let s = snapshot(ModelKind::ALL[k], seed);
            let back = Snapshot::from_text(&s.to_text()).unwrap();
            prop_assert_eq!(&back, &s);
            let bits = |m: &SharedParams| m.user.values().iter().chain(m.poi.values()).map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back.params), bits(&s.params));
        }
    }

    #[test]
    fn header_names_kind_and_shape() {
        let text = snapshot(ModelKind::Gru, 2).to_text();
        assert!(text.starts_with("#n2rec-model-v1 kind=gru d=5 M=3 Q=4 jtll=on seed=2\n"));
    }

    #[test]
    fn truncated_snapshot_is_rejected() {
        let text = snapshot(ModelKind::SeqRec, 1).to_text();
        let cut = &text[..text.len() - "#end\n".len()];
        assert!(Snapshot::from_text(cut).is_err());
        let wrong = text.replacen("model-v1", "model-v9", 1);
        assert!(matches!(Snapshot::from_text(&wrong), Err(Error::Version { .. })));
    }
}
