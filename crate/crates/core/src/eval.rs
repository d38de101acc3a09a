//! Verification trials, cosine scoring, EER and minDCF.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub target: bool,
    pub enroll: String,
    pub test: String,
    pub score: Option<f64>,
}

impl fmt::Display for Trial {
    /// `<label> <enroll> <test>` and, when scored, the score to 6 decimals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", u8::from(self.target), self.enroll, self.test)?;
        if let Some(s) = self.score {
            write!(f, " {s:.6}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
}

impl TrialSet {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Target and nontarget scores. Every trial must be scored.
    pub fn split_scores(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut tar, mut non) = (Vec::new(), Vec::new());
        for (i, t) in self.trials.iter().enumerate() {
            let s = t.score.ok_or_else(|| Error::Input(format!("trial {} ({} {}) has no score", i + 1, t.enroll, t.test)))?;
            if t.target {
                tar.push(s);
            } else {
                non.push(s);
            }
        }
        Ok((tar, non))
    }

    /// Scores file text, one trial per line.
    pub fn to_scores_text(&self) -> String {
        self.trials.iter().map(|t| format!("{t}\n")).collect()
    }
}

fn parse_label(tok: &str, line: usize) -> Result<bool> {
    match tok {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(Error::Parse { line, msg: format!("label must be 0 or 1, got {other:?}") }),
    }
}

fn parse_lines(text: &str, with_score: bool) -> Result<TrialSet> {
    let fields = if with_score { 4 } else { 3 };
    let mut trials = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != fields {
            return Err(Error::Parse { line: i + 1, msg: format!("expected {fields} fields, got {}", toks.len()) });
        }
        let score = if with_score {
            let s: f64 = toks[3]
                .parse()
                .map_err(|_| Error::Parse { line: i + 1, msg: format!("bad score {:?}", toks[3]) })?;
            if !s.is_finite() {
                return Err(Error::Parse { line: i + 1, msg: format!("score {s} is not finite") });
            }
            Some(s)
        } else {
            None
        };
        trials.push(Trial {
            target: parse_label(toks[0], i + 1)?,
            enroll: toks[1].to_string(),
            test: toks[2].to_string(),
            score,
        });
    }
    Ok(TrialSet { trials })
}

/// `<0|1> <enroll> <test>` per line; blank lines and `#` comments skipped.
pub fn parse_trials(text: &str) -> Result<TrialSet> {
    parse_lines(text, false)
}

/// `<0|1> <enroll> <test> <score>` per line.
pub fn parse_scores(text: &str) -> Result<TrialSet> {
    parse_lines(text, true)
}

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("cannot compare embeddings of length {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(na > 0.0 && nb > 0.0) || !na.is_finite() || !nb.is_finite() {
        return Err(Error::Numeric("cosine score needs nonzero finite embeddings".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams { p_target: 0.05, c_miss: 1.0, c_fa: 1.0 }
    }
}

impl DcfParams {
    /// Normalized detection cost at one operating point.
    pub fn cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        let raw = self.c_miss * self.p_target * p_miss + self.c_fa * (1.0 - self.p_target) * p_fa;
        raw / (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub min_dcf_threshold: f64,
    pub points: Vec<OperatingPoint>,
}

impl fmt::Display for EvalMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EER={:.6} minDCF={:.6}", 100.0 * self.eer, self.min_dcf)
    }
}

fn check_scores(targets: &[f64], nontargets: &[f64]) -> Result<()> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::Input(format!(
            "need at least one target and one nontarget trial, got {} and {}",
            targets.len(),
            nontargets.len()
        )));
    }
    if targets.iter().chain(nontargets).any(|s| !s.is_finite()) {
        return Err(Error::Numeric("scores must be finite".into()));
    }
    Ok(())
}

/// Miss and false-alarm rates at every distinct score and at `+inf`.
/// A trial is accepted when its score is `>=` the threshold.
pub fn operating_points(targets: &[f64], nontargets: &[f64]) -> Result<Vec<OperatingPoint>> {
    check_scores(targets, nontargets)?;
    let mut tar = targets.to_vec();
    let mut non = nontargets.to_vec();
    tar.sort_by(f64::total_cmp);
    non.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = tar.iter().chain(&non).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);

    let (nt, nn) = (tar.len() as f64, non.len() as f64);
    let (mut below_t, mut below_n) = (0usize, 0usize);
    Ok(thresholds
        .into_iter()
        .map(|th| {
            while below_t < tar.len() && tar[below_t] < th {
                below_t += 1;
            }
            while below_n < non.len() && non[below_n] < th {
                below_n += 1;
            }
            OperatingPoint { threshold: th, p_miss: below_t as f64 / nt, p_fa: (non.len() - below_n) as f64 / nn }
        })
        .collect())
}

/// Equal error rate from the operating points, interpolating linearly between
/// the two points that bracket `p_miss = p_fa`.
pub fn eer_from_points(points: &[OperatingPoint]) -> Result<(f64, f64)> {
    let first = points.iter().position(|p| p.p_miss >= p.p_fa).ok_or_else(|| {
        Error::Input("operating points never cross; the last point must have p_fa = 0".into())
    })?;
    let hi = points[first];
    if hi.p_miss == hi.p_fa || first == 0 {
        return Ok((hi.p_miss.max(hi.p_fa), hi.threshold));
    }
    let lo = points[first - 1];
    let alpha = (lo.p_fa - lo.p_miss) / ((hi.p_miss - lo.p_miss) - (hi.p_fa - lo.p_fa));
    let eer = lo.p_miss + alpha * (hi.p_miss - lo.p_miss);
    let threshold = if hi.threshold.is_finite() { lo.threshold + alpha * (hi.threshold - lo.threshold) } else { lo.threshold };
    Ok((eer, threshold))
}

/// `(eer, threshold)`.
pub fn compute_eer(targets: &[f64], nontargets: &[f64]) -> Result<(f64, f64)> {
    eer_from_points(&operating_points(targets, nontargets)?)
}

/// `(min_dcf, threshold)` over all operating points.
pub fn compute_min_dcf(targets: &[f64], nontargets: &[f64], params: &DcfParams) -> Result<(f64, f64)> {
    let points = operating_points(targets, nontargets)?;
    Ok(min_dcf_from_points(&points, params))
}

fn min_dcf_from_points(points: &[OperatingPoint], params: &DcfParams) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NAN), |best, p| {
        let c = params.cost(p.p_miss, p.p_fa);
        if c < best.0 {
            (c, p.threshold)
        } else {
            best
        }
    })
}

pub fn evaluate(targets: &[f64], nontargets: &[f64], params: &DcfParams) -> Result<EvalMetrics> {
    let points = operating_points(targets, nontargets)?;
    let (eer, eer_threshold) = eer_from_points(&points)?;
    let (min_dcf, min_dcf_threshold) = min_dcf_from_points(&points, params);
    Ok(EvalMetrics { eer, eer_threshold, min_dcf, min_dcf_threshold, points })
}

/// Metrics for a fully scored trial set at the default cost parameters.
pub fn evaluate_trials(trials: &TrialSet) -> Result<EvalMetrics> {
    let (tar, non) = trials.split_scores()?;
    evaluate(&tar, &non, &DcfParams::default())
}

/// Samples distinct unordered pairs from labeled utterances: `targets`
/// same-label pairs and `nontargets` different-label pairs.
pub fn make_trials<R: Rng + ?Sized>(
    utts: &[(String, usize)],
    targets: usize,
    nontargets: usize,
    rng: &mut R,
) -> Result<TrialSet> {
    let (mut same, mut diff) = (Vec::new(), Vec::new());
    for i in 0..utts.len() {
        for j in i + 1..utts.len() {
            if utts[i].1 == utts[j].1 { same.push((i, j)) } else { diff.push((i, j)) }
        }
    }
    if same.len() < targets || diff.len() < nontargets {
        return Err(Error::Input(format!(
            "asked for {targets} target and {nontargets} nontarget pairs, only {} and {} exist",
            same.len(),
            diff.len()
        )));
    }
    same.shuffle(rng);
    diff.shuffle(rng);
    let mut picked: Vec<(bool, usize, usize)> = same[..targets]
        .iter()
        .map(|&(i, j)| (true, i, j))
        .chain(diff[..nontargets].iter().map(|&(i, j)| (false, i, j)))
        .collect();
    picked.shuffle(rng);
    Ok(TrialSet {
        trials: picked
            .into_iter()
            .map(|(target, i, j)| Trial { target, enroll: utts[i].0.clone(), test: utts[j].0.clone(), score: None })
            .collect(),
    })
}
