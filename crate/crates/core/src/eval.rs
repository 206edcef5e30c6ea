//! Next-new evaluation: only test check-ins at POIs absent from the user's
//! train partition count, and the candidate space excludes every
//! train-visited POI.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ids::{PoiId, UserId};
use crate::ingest::Dataset;
use crate::models::{Model, ModelKind, Query, SharedParams, ABSTAIN};

pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 20];

/// Acc@K and MRR over all qualifying test check-ins.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub acc_at: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub num_samples: usize,
    /// Raw hit counts behind `acc_at`.
    pub hits: BTreeMap<usize, usize>,
}

/// Labels printed alongside a report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportLabels {
    pub dataset: String,
    pub model: ModelKind,
    pub jtll: bool,
    pub seed: u64,
}

impl EvalReport {
    pub fn acc(&self, k: usize) -> Option<f64> {
        self.acc_at.get(&k).copied()
    }

    /// Single tab-separated `key=value` line.
    pub fn to_record(&self, labels: &ReportLabels) -> String {
        let mut out = format!(
            "dataset={}\tmodel={}\tjtll={}\tseed={}",
            labels.dataset,
            labels.model,
            if labels.jtll { "on" } else { "off" },
            labels.seed
        );
        for (k, v) in &self.acc_at {
            let _ = write!(out, "\tacc@{k}={v}");
        }
        let _ = write!(out, "\tmrr={}\tn_samples={}", self.mrr, self.num_samples);
        out
    }

    /// Aligned human-readable table.
    pub fn to_table(&self, labels: &ReportLabels) -> String {
        let mut head = format!("{:<12}{:<8}{:<6}", "model", "jtll", "seed");
        let mut row = format!(
            "{:<12}{:<8}{:<6}",
            labels.model.name(),
            if labels.jtll { "on" } else { "off" },
            labels.seed
        );
        for (k, v) in &self.acc_at {
            let _ = write!(head, "{:>10}", format!("Acc@{k}"));
            let _ = write!(row, "{v:>10.4}");
        }
        let _ = write!(head, "{:>10}{:>10}", "MRR", "samples");
        let _ = write!(row, "{:>10.4}{:>10}", self.mrr, self.num_samples);
        format!("dataset: {}\n{head}\n{row}\n", labels.dataset)
    }
}

/// All POIs minus those in the user's train partition, ascending.
pub fn candidate_set(dataset: &Dataset, user: UserId) -> Vec<PoiId> {
    let visited = dataset.train_pois(user);
    (0..dataset.num_pois())
        .map(PoiId::from_index)
        .filter(|p| visited.binary_search(p).is_err())
        .collect()
}

fn check_scores(scores: &[f64], candidates: &[PoiId]) -> Result<()> {
    assert_eq!(scores.len(), candidates.len(), "scores must align with candidates");
    match scores.iter().position(|s| s.is_nan()) {
        Some(i) => Err(Error::NanScore { poi: candidates[i].0 }),
        None => Ok(()),
    }
}

/// Orders candidates by descending score, ties by ascending id. Abstaining
/// candidates come last.
pub fn rank_candidates(scores: &[f64], candidates: &[PoiId]) -> Result<Vec<PoiId>> {
    check_scores(scores, candidates)?;
    let mut order: Vec<(f64, PoiId)> = scores.iter().copied().zip(candidates.iter().copied()).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(order.into_iter().map(|(_, p)| p).collect())
}

/// 1-based position `target` would take in [`rank_candidates`], or `None` if
/// the model abstains on it. Linear time.
pub fn rank_of(scores: &[f64], candidates: &[PoiId], target: PoiId) -> Result<Option<usize>> {
    check_scores(scores, candidates)?;
    let t = candidates
        .iter()
        .position(|&c| c == target)
        .expect("target must be a candidate");
    let s = scores[t];
    if s == ABSTAIN {
        return Ok(None);
    }
    let ahead = scores
        .iter()
        .zip(candidates)
        .filter(|(&sc, &c)| sc > s || (sc == s && c < target))
        .count();
    Ok(Some(ahead + 1))
}

#[derive(Debug, Default)]
struct Partial {
    hits: Vec<usize>,
    reciprocal_sum: f64,
    samples: usize,
}

fn normalize_ks(ks: &[usize]) -> Result<Vec<usize>> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(Error::Config("cut-offs must be a non-empty list of positive integers".into()));
    }
    Ok(ks)
}

fn evaluate_user(model: &Model, params: &SharedParams, dataset: &Dataset, user: UserId, ks: &[usize]) -> Result<Partial> {
    let mut part = Partial {
        hits: vec![0; ks.len()],
        ..Partial::default()
    };
    let candidates = candidate_set(dataset, user);
    if candidates.is_empty() {
        return Ok(part);
    }
    let visited = dataset.train_pois(user);
    let seq = dataset.sequence(user);
    let split = dataset.split_point(user).expect("split checked by caller");
    for j in split..seq.len() {
        let target = seq[j].poi;
        if visited.binary_search(&target).is_ok() {
            continue;
        }
        let query = Query {
            user,
            history: &seq[..j],
        };
        let scores = model.score_candidates(params, &query, &candidates)?;
        part.samples += 1;
        if let Some(rank) = rank_of(&scores, &candidates, target)? {
            part.reciprocal_sum += 1.0 / rank as f64;
            for (h, &k) in part.hits.iter_mut().zip(ks) {
                if rank <= k {
                    *h += 1;
                }
            }
        }
    }
    Ok(part)
}

/// Evaluates `model` on every test check-in whose POI the user never visited
/// in training. Sequential models see the chronological prefix up to the
/// predicted step, including earlier test check-ins; the candidate mask
/// stays fixed to the train partition.
///
/// Users are processed in parallel; partial sums are combined in user order
/// so the result does not depend on the thread count.
pub fn evaluate(model: &Model, params: &SharedParams, dataset: &Dataset, ks: &[usize]) -> Result<EvalReport> {
    dataset.require_split()?;
    let ks = normalize_ks(ks)?;
    let users: Vec<UserId> = dataset.users().collect();
    let partials: Vec<Partial> = users
        .par_iter()
        .map(|&u| evaluate_user(model, params, dataset, u, &ks))
        .collect::<Result<_>>()?;

    let mut hits = vec![0usize; ks.len()];
    let mut reciprocal_sum = 0.0;
    let mut samples = 0usize;
    for p in &partials {
        for (h, ph) in hits.iter_mut().zip(&p.hits) {
            *h += ph;
        }
        reciprocal_sum += p.reciprocal_sum;
        samples += p.samples;
    }
    if samples == 0 {
        return Err(Error::NoEvaluationSamples);
    }
    let n = samples as f64;
    Ok(EvalReport {
        acc_at: ks.iter().zip(&hits).map(|(&k, &h)| (k, h as f64 / n)).collect(),
        mrr: reciprocal_sum / n,
        num_samples: samples,
        hits: ks.iter().copied().zip(hits).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{split, RawCheckIn};
    use crate::models::{Popularity, UserPopularity};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(v: &[u32]) -> Vec<PoiId> {
        v.iter().map(|&i| PoiId(i)).collect()
    }

    fn dataset(rows: &[(&str, &str)], frac: f64) -> Dataset {
        let raw: Vec<RawCheckIn> = rows
            .iter()
            .enumerate()
            .map(|(i, (u, p))| RawCheckIn {
                user_key: u.to_string(),
                poi_key: p.to_string(),
                lat: 0.0,
                lon: 0.0,
                timestamp: i as i64,
            })
            .collect();
        split(Dataset::from_raw(&raw).unwrap(), frac).unwrap()
    }

    #[test]
    fn candidates_exclude_train_visits() {
        // user m visited l1, l2 in train; l3..l6 exist through other users
        let d = dataset(
            &[("m", "l1"), ("m", "l2"), ("m", "l3"), ("o", "l4"), ("o", "l5"), ("o", "l6")],
            0.67,
        );
        let m = d.user_id("m").unwrap();
        let got: Vec<&str> = candidate_set(&d, m).into_iter().map(|p| d.poi_key(p)).collect();
        assert_eq!(got, ["l3", "l4", "l5", "l6"]);
    }

    #[test]
    fn user_who_visited_everything_has_no_candidates() {
        let d = dataset(&[("a", "x"), ("a", "y"), ("a", "x")], 0.67);
        assert!(candidate_set(&d, UserId(0)).is_empty());
        let utop = Model::UTop(UserPopularity::fit(&d).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = SharedParams::init(1, 2, 2, &mut rng);
        assert!(matches!(evaluate(&utop, &params, &d, &DEFAULT_KS), Err(Error::NoEvaluationSamples)));
    }

    #[test]
    fn ranking_tie_rule() {
        let ranked = rank_candidates(&[0.2, 0.9, 0.2], &ids(&[3, 4, 5])).unwrap();
        assert_eq!(ranked, ids(&[4, 3, 5]));
        let ranked = rank_candidates(&[ABSTAIN, 0.1, ABSTAIN, -5.0], &ids(&[7, 9, 2, 8])).unwrap();
        assert_eq!(ranked, ids(&[9, 8, 2, 7]));
        let all = rank_candidates(&[ABSTAIN; 3], &ids(&[6, 1, 4])).unwrap();
        assert_eq!(all, ids(&[1, 4, 6]));
    }

    #[test]
    fn nan_is_fatal() {
        assert!(matches!(
            rank_candidates(&[0.1, f64::NAN], &ids(&[0, 1])),
            Err(Error::NanScore { poi: 1 })
        ));
    }

    #[test]
    fn rank_of_matches_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rand::Rng::gen_range(&mut rng, 1..30);
            let cands: Vec<PoiId> = (0..n).map(|i| PoiId(i * 2 + 1)).collect();
            let scores: Vec<f64> = (0..n)
                .map(|_| match rand::Rng::gen_range(&mut rng, 0..6) {
                    0 => ABSTAIN,
                    v => v as f64,
                })
                .collect();
            let ranked = rank_candidates(&scores, &cands).unwrap();
            for (i, &c) in cands.iter().enumerate() {
                let expected = if scores[i] == ABSTAIN {
                    None
                } else {
                    Some(ranked.iter().position(|&r| r == c).unwrap() + 1)
                };
                assert_eq!(rank_of(&scores, &cands, c).unwrap(), expected);
            }
        }
    }

    #[test]
    fn single_sample_at_rank_two() {
        // u: train a b, test c. v: train d d, test c.
        let d = dataset(
            &[
                ("u", "a"),
                ("u", "b"),
                ("u", "c"),
                ("v", "d"),
                ("v", "d"),
                ("v", "c"),
            ],
            0.67,
        );
        let u = d.user_id("u").unwrap();
        let v = d.user_id("v").unwrap();
        let top = Model::Top(Popularity::fit(&d).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = SharedParams::init(2, 4, 2, &mut rng);
        let report = evaluate(&top, &params, &d, &DEFAULT_KS).unwrap();
        // u: candidates {c, d}, scores c=0, d=2 -> c at rank 2.
        // v: candidates {a, b, c}, all score 1 -> tie by id: a(0) b(1) c(2) -> rank 3.
        assert_eq!(candidate_set(&d, u).len(), 2);
        assert_eq!(candidate_set(&d, v).len(), 3);
        assert_eq!(report.num_samples, 2);
        assert_eq!(report.acc(1), Some(0.0));
        assert_eq!(report.acc(5), Some(1.0));
        assert_eq!(report.acc(20), Some(1.0));
        assert!((report.mrr - (0.5 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn utop_scores_zero() {
        let d = dataset(&[("u", "a"), ("u", "b"), ("u", "c"), ("v", "c"), ("v", "a"), ("v", "b")], 0.67);
        let utop = Model::UTop(UserPopularity::fit(&d).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = SharedParams::init(2, 3, 2, &mut rng);
        let r = evaluate(&utop, &params, &d, &DEFAULT_KS).unwrap();
        assert!(r.num_samples > 0);
        assert!(r.acc_at.values().all(|v| *v == 0.0));
        assert_eq!(r.mrr, 0.0);
    }

    #[test]
    fn record_and_table_formats() {
        let report = EvalReport {
            acc_at: [(1, 0.25), (5, 0.5)].into_iter().collect(),
            mrr: 0.375,
            num_samples: 4,
            hits: [(1, 1), (5, 2)].into_iter().collect(),
        };
        let labels = ReportLabels {
            dataset: "toy".into(),
            model: ModelKind::Top,
            jtll: false,
            seed: 3,
        };
        assert_eq!(
            report.to_record(&labels),
            "dataset=toy\tmodel=top\tjtll=off\tseed=3\tacc@1=0.25\tacc@5=0.5\tmrr=0.375\tn_samples=4"
        );
        let table = report.to_table(&labels);
        assert!(table.contains("Acc@1") && table.contains("0.3750"));
    }
}
