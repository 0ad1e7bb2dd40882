//! Explanation-quality metrics (ROUGE-1/2/L/Lsum, BLEU-1) and aggregation
//! of binary human judgments.
//!
//! All metrics share one tokenization: lowercase, punctuation removed,
//! whitespace split.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::ratio;
use crate::text::{metric_tokens, split_sentences};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

impl<T: Scalar> Prf<T> {
    /// F1 is the harmonic mean of precision and recall, 0 when both are 0.
    pub fn new(precision: T, recall: T) -> Self {
        let sum = precision + recall;
        let f1 = if sum == T::zero() {
            T::zero()
        } else {
            T::lit(2.0) * precision * recall / sum
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }

    fn from_counts(hits: usize, cand: usize, reference: usize) -> Self {
        Self::new(ratio(hits, cand), ratio(hits, reference))
    }

    fn zero() -> Self {
        Prf::new(T::zero(), T::zero())
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_overlap<K: std::hash::Hash + Eq>(a: &HashMap<K, usize>, b: &HashMap<K, usize>) -> usize {
    a.iter()
        .map(|(k, &ca)| b.get(k).map_or(0, |&cb| ca.min(cb)))
        .sum()
}

/// n-gram multiset overlap. Returns all zeros for `n == 0`.
pub fn rouge_n<T: Scalar>(candidate: &str, reference: &str, n: usize) -> Prf<T> {
    if n == 0 {
        return Prf::zero();
    }
    let c = metric_tokens(candidate);
    let r = metric_tokens(reference);
    let cn = ngram_counts(&c, n);
    let rn = ngram_counts(&r, n);
    let hits = clipped_overlap(&cn, &rn);
    Prf::from_counts(
        hits,
        c.len().saturating_sub(n - 1),
        r.len().saturating_sub(n - 1),
    )
}

fn lcs_table(a: &[String], b: &[String]) -> Vec<Vec<usize>> {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    lcs_table(a, b)[a.len()][b.len()]
}

/// Positions in `a` that one longest common subsequence with `b` uses.
fn lcs_positions(a: &[String], b: &[String]) -> Vec<usize> {
    let t = lcs_table(a, b);
    let (mut i, mut j) = (a.len(), b.len());
    let mut out = Vec::with_capacity(t[i][j]);
    while i > 0 && j > 0 {
        if a[i - 1] == b[j - 1] {
            out.push(i - 1);
            i -= 1;
            j -= 1;
        } else if t[i - 1][j] >= t[i][j - 1] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out.reverse();
    out
}

/// Longest common subsequence over the token sequences.
pub fn rouge_l<T: Scalar>(candidate: &str, reference: &str) -> Prf<T> {
    let c = metric_tokens(candidate);
    let r = metric_tokens(reference);
    Prf::from_counts(lcs_len(&c, &r), c.len(), r.len())
}

/// Summary-level LCS. Both texts are split into sentences on `.`, `!` and
/// `?`; each reference sentence contributes the union of its LCS hits
/// against every candidate sentence, clipped by token counts so that no
/// token is credited more often than it occurs on either side.
pub fn rouge_sum<T: Scalar>(candidate: &str, reference: &str) -> Prf<T> {
    let cand: Vec<Vec<String>> = split_sentences(candidate)
        .into_iter()
        .map(metric_tokens)
        .collect();
    let refs: Vec<Vec<String>> = split_sentences(reference)
        .into_iter()
        .map(metric_tokens)
        .collect();
    let cand_total: usize = cand.iter().map(Vec::len).sum();
    let ref_total: usize = refs.iter().map(Vec::len).sum();
    if cand_total == 0 || ref_total == 0 {
        return Prf::zero();
    }

    let mut cand_left: HashMap<&str, usize> = HashMap::new();
    for t in cand.iter().flatten() {
        *cand_left.entry(t).or_insert(0) += 1;
    }
    let mut ref_left: HashMap<&str, usize> = HashMap::new();
    for t in refs.iter().flatten() {
        *ref_left.entry(t).or_insert(0) += 1;
    }

    let mut hits = 0;
    for r in &refs {
        let union: BTreeSet<usize> = cand.iter().flat_map(|c| lcs_positions(r, c)).collect();
        for i in union {
            let tok = r[i].as_str();
            let (Some(cl), Some(rl)) = (cand_left.get_mut(tok), ref_left.get_mut(tok)) else {
                continue;
            };
            if *cl > 0 && *rl > 0 {
                *cl -= 1;
                *rl -= 1;
                hits += 1;
            }
        }
    }
    Prf::from_counts(hits, cand_total, ref_total)
}

/// Clipped unigram precision times the brevity penalty
/// `min(1, exp(1 - |ref| / |cand|))`. An empty candidate scores 0.
pub fn bleu_1<T: Scalar>(candidate: &str, reference: &str) -> T {
    let c = metric_tokens(candidate);
    if c.is_empty() {
        return T::zero();
    }
    let r = metric_tokens(reference);
    let hits = clipped_overlap(&ngram_counts(&c, 1), &ngram_counts(&r, 1));
    let precision: T = ratio(hits, c.len());
    let bp = (T::one() - ratio::<T>(r.len(), c.len()))
        .exp()
        .min(T::one());
    precision * bp
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport<T> {
    pub rouge1: Prf<T>,
    pub rouge2: Prf<T>,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf<T>,
    #[serde(rename = "rougeSum")]
    pub rouge_sum: Prf<T>,
    pub bleu1: T,
}

impl<T: Scalar> MetricReport<T> {
    pub fn for_pair(candidate: &str, reference: &str) -> Self {
        MetricReport {
            rouge1: rouge_n(candidate, reference, 1),
            rouge2: rouge_n(candidate, reference, 2),
            rouge_l: rouge_l(candidate, reference),
            rouge_sum: rouge_sum(candidate, reference),
            bleu1: bleu_1(candidate, reference),
        }
    }

    fn rows(&self) -> [(&'static str, Option<Prf<T>>, T); 5] {
        [
            ("ROUGE-1", Some(self.rouge1), self.rouge1.f1),
            ("ROUGE-2", Some(self.rouge2), self.rouge2.f1),
            ("ROUGE-L", Some(self.rouge_l), self.rouge_l.f1),
            ("ROUGE-SUM", Some(self.rouge_sum), self.rouge_sum.f1),
            ("BLEU-1", None, self.bleu1),
        ]
    }

    /// Aligned text table, values as percentages with one decimal.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>9} {:>9} {:>9}\n",
            "metric", "precision", "recall", "f1"
        );
        for (name, prf, f1) in self.rows() {
            let pct = |x: T| format!("{:.1}", x.to_f64().unwrap_or(f64::NAN) * 100.0);
            let (p, r) = prf.map_or(("-".into(), "-".into()), |m| {
                (pct(m.precision), pct(m.recall))
            });
            let _ = writeln!(out, "{name:<10} {p:>9} {r:>9} {:>9}", pct(f1));
        }
        out
    }
}

fn mean_prf<T: Scalar>(xs: impl Iterator<Item = Prf<T>>, n: T) -> Prf<T> {
    let (p, r, f) = xs.fold((T::zero(), T::zero(), T::zero()), |(p, r, f), m| {
        (p + m.precision, r + m.recall, f + m.f1)
    });
    Prf {
        precision: p / n,
        recall: r / n,
        f1: f / n,
    }
}

/// Per-pair metrics averaged over the corpus (sentence-level averaging).
pub fn corpus_report<T: Scalar, S: AsRef<str> + Sync>(pairs: &[(S, S)]) -> Result<MetricReport<T>> {
    Ok(corpus_report_with_rows(pairs)?.0)
}

/// Like [`corpus_report`], also returning the per-pair reports in input
/// order.
pub fn corpus_report_with_rows<T: Scalar, S: AsRef<str> + Sync>(
    pairs: &[(S, S)],
) -> Result<(MetricReport<T>, Vec<MetricReport<T>>)> {
    if pairs.is_empty() {
        return Err(Error::contract("metric corpus is empty"));
    }
    let rows: Vec<MetricReport<T>> = pairs
        .par_iter()
        .map(|(c, r)| MetricReport::for_pair(c.as_ref(), r.as_ref()))
        .collect();
    let n = T::from_count(rows.len());
    let report = MetricReport {
        rouge1: mean_prf(rows.iter().map(|m| m.rouge1), n),
        rouge2: mean_prf(rows.iter().map(|m| m.rouge2), n),
        rouge_l: mean_prf(rows.iter().map(|m| m.rouge_l), n),
        rouge_sum: mean_prf(rows.iter().map(|m| m.rouge_sum), n),
        bleu1: rows.iter().fold(T::zero(), |a, m| a + m.bleu1) / n,
    };
    Ok((report, rows))
}

/// One annotator's binary judgments of one explanation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanEvalRecord {
    pub example_id: String,
    pub annotator_id: String,
    pub relevant: u8,
    pub factual: u8,
    pub distinguishing: u8,
    pub grammatical: u8,
}

impl HumanEvalRecord {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.aspects() {
            if v > 1 {
                return Err(Error::example(
                    &self.example_id,
                    format!("{name} judgment must be 0 or 1, got {v}"),
                ));
            }
        }
        Ok(())
    }

    fn aspects(&self) -> [(&'static str, u8); 4] {
        [
            ("relevant", self.relevant),
            ("factual", self.factual),
            ("distinguishing", self.distinguishing),
            ("grammatical", self.grammatical),
        ]
    }
}

/// Percentage of positive judgments per aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEvalReport {
    pub relevant: f64,
    pub factual: f64,
    pub distinguishing: f64,
    pub grammatical: f64,
    pub records: usize,
    pub annotators: usize,
}

pub const HUMAN_EVAL_HEADER: [&str; 4] = ["Relevant", "Factual", "Distinguishing", "Grammatical"];

impl HumanEvalReport {
    pub fn header(label_width: usize) -> String {
        let cols: Vec<String> = HUMAN_EVAL_HEADER
            .iter()
            .map(|h| format!("{h:>14}"))
            .collect();
        format!("{:<label_width$} |{}", "Model", cols.join(" |"))
    }

    /// One aligned row, `label | 80.3 | 54.6 | ...`, one decimal per aspect.
    pub fn to_row(&self, label: &str, label_width: usize) -> String {
        let cols: Vec<String> = self.values().iter().map(|v| format!("{v:>14.1}")).collect();
        format!("{label:<label_width$} |{}", cols.join(" |"))
    }

    /// Inverse of [`to_row`](Self::to_row) for the aspect values. Counts are
    /// not part of the row and come back as 0.
    pub fn parse_row(row: &str) -> Result<(String, HumanEvalReport)> {
        let mut parts = row.split('|').map(str::trim);
        let label = parts.next().unwrap_or_default().to_owned();
        let vals: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::parse(1, format!("bad value {p:?}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != 4 {
            return Err(Error::parse(
                1,
                format!("expected 4 aspect columns, got {}", vals.len()),
            ));
        }
        Ok((
            label,
            HumanEvalReport {
                relevant: vals[0],
                factual: vals[1],
                distinguishing: vals[2],
                grammatical: vals[3],
                records: 0,
                annotators: 0,
            },
        ))
    }

    pub fn values(&self) -> [f64; 4] {
        [
            self.relevant,
            self.factual,
            self.distinguishing,
            self.grammatical,
        ]
    }
}

pub fn aggregate_human_eval(records: &[HumanEvalRecord]) -> Result<HumanEvalReport> {
    if records.is_empty() {
        return Err(Error::contract("no human-eval records"));
    }
    let mut sums = [0usize; 4];
    for r in records {
        r.validate()?;
        for (s, (_, v)) in sums.iter_mut().zip(r.aspects()) {
            *s += v as usize;
        }
    }
    let pct = |s: usize| 100.0 * s as f64 / records.len() as f64;
    let annotators: HashSet<&str> = records.iter().map(|r| r.annotator_id.as_str()).collect();
    Ok(HumanEvalReport {
        relevant: pct(sums[0]),
        factual: pct(sums[1]),
        distinguishing: pct(sums[2]),
        grammatical: pct(sums[3]),
        records: records.len(),
        annotators: annotators.len(),
    })
}
