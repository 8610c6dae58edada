//! Equal error rate of verification trials.

use std::fmt::Write;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trials {
    pub target: Vec<f64>,
    pub nontarget: Vec<f64>,
}

impl Trials {
    /// Parses lines of `target|nontarget <score>`; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Trials::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: &str| Error::InvalidArgument(format!("score line {}: {why}: {line:?}", i + 1));
            let mut parts = line.split_whitespace();
            let (Some(label), Some(score), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected `label score`"));
            };
            let score: f64 = score.parse().map_err(|_| bad("score is not a number"))?;
            if !score.is_finite() {
                return Err(bad("score is not finite"));
            }
            match label {
                "target" => t.target.push(score),
                "nontarget" => t.nontarget.push(score),
                _ => return Err(bad("label must be target or nontarget")),
            }
        }
        Ok(t)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.target {
            let _ = writeln!(out, "target {s}");
        }
        for s in &self.nontarget {
            let _ = writeln!(out, "nontarget {s}");
        }
        out
    }

    /// Cosine-scored trials over all unordered pairs of labelled embeddings.
    pub fn from_embeddings(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        if embeddings.len() != labels.len() {
            return Err(Error::InvalidArgument(format!("{} embeddings for {} labels", embeddings.len(), labels.len())));
        }
        let mut t = Trials::default();
        for i in 0..embeddings.len() {
            for j in i + 1..embeddings.len() {
                let s = cosine(&embeddings[i], &embeddings[j])?;
                if labels[i] == labels[j] {
                    t.target.push(s);
                } else {
                    t.nontarget.push(s);
                }
            }
        }
        Ok(t)
    }

    pub fn eer(&self) -> Result<f64> {
        eer(&self.target, &self.nontarget)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("embeddings of length {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine score of a zero embedding".into()));
    }
    Ok(dot / (na * nb))
}

/// Error-rate curve at every cut between distinct scores, from accepting
/// everything to rejecting everything: `(false accept, false reject)`.
fn error_curve(target: &[f64], nontarget: &[f64]) -> Vec<(f64, f64)> {
    let mut all: Vec<(f64, bool)> =
        target.iter().map(|&s| (s, true)).chain(nontarget.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (np, nn) = (target.len() as f64, nontarget.len() as f64);
    let (mut rejected_target, mut rejected_non) = (0usize, 0usize);
    let mut curve = vec![(1.0, 0.0)];
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                rejected_target += 1;
            } else {
                rejected_non += 1;
            }
            i += 1;
        }
        let far = (nontarget.len() - rejected_non) as f64 / nn;
        curve.push((far, rejected_target as f64 / np));
    }
    curve
}

/// Rate where false accepts equal false rejects, interpolating linearly
/// between the two cuts that bracket the crossing.
pub fn eer(target: &[f64], nontarget: &[f64]) -> Result<f64> {
    if target.is_empty() || nontarget.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need at least one target and one nontarget score, got {} and {}",
            target.len(),
            nontarget.len()
        )));
    }
    if target.iter().chain(nontarget).any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let curve = error_curve(target, nontarget);
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 == y0 {
            return Ok(x0);
        }
        if x1 == y1 {
            return Ok(x1);
        }
        if (x0 > y0) != (x1 > y1) {
            // Intersection of the segment with the diagonal.
            return Ok((x0 * y1 - x1 * y0) / ((x0 - y0) - (x1 - y1)));
        }
    }
    unreachable!("error curve runs from (1, 0) to (0, 1)")
}

/// EER folded into `[0, 0.5]`, undoing a swapped target/nontarget convention.
pub fn eer_canonical(target: &[f64], nontarget: &[f64]) -> Result<f64> {
    let e = eer(target, nontarget)?;
    Ok(e.min(1.0 - e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute force: sweep every midpoint threshold, keep the one where
    /// |FAR - FRR| is smallest, and interpolate with its neighbour.
    fn sweep_oracle(pos: &[f64], neg: &[f64]) -> f64 {
        let mut th: Vec<f64> = pos.iter().chain(neg).copied().collect();
        th.sort_by(f64::total_cmp);
        th.dedup();
        let mut cuts = vec![th[0] - 1.0];
        cuts.extend(th.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        cuts.push(th[th.len() - 1] + 1.0);
        let rates: Vec<(f64, f64)> = cuts
            .iter()
            .map(|&c| {
                let far = neg.iter().filter(|&&s| s > c).count() as f64 / neg.len() as f64;
                let frr = pos.iter().filter(|&&s| s < c).count() as f64 / pos.len() as f64;
                (far, frr)
            })
            .collect();
        for w in rates.windows(2) {
            let (d0, d1) = (w[0].0 - w[0].1, w[1].0 - w[1].1);
            if d0 >= 0.0 && d1 <= 0.0 {
                if d0 == d1 {
                    return w[0].0;
                }
                let t = d0 / (d0 - d1);
                return w[0].0 + t * (w[1].0 - w[0].0);
            }
        }
        unreachable!()
    }

    #[test]
    fn three_score_example() {
        let e = eer(&[0.9, 0.8, 0.7], &[0.75, 0.3, 0.1]).unwrap();
        assert!((e - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(sweep_oracle(&[0.9, 0.8, 0.7], &[0.75, 0.3, 0.1]), e);
    }

    #[test]
    fn separated_and_identical() {
        assert_eq!(eer(&[0.9, 0.8], &[0.1, 0.2, 0.3]).unwrap(), 0.0);
        assert_eq!(eer(&[0.1, 0.5, 0.9], &[0.9, 0.1, 0.5]).unwrap(), 0.5);
        assert_eq!(eer(&[0.1], &[0.9]).unwrap(), 1.0);
        assert_eq!(eer_canonical(&[0.1], &[0.9]).unwrap(), 0.0);
    }

    #[test]
    fn empty_and_non_finite_rejected() {
        assert!(eer(&[], &[0.1]).is_err());
        assert!(eer(&[0.3], &[]).is_err());
        assert!(eer(&[f64::NAN], &[0.1]).is_err());
    }

    #[test]
    fn parses_score_files() {
        let t = Trials::parse("# trials\ntarget 0.9\n\nnontarget -0.25\ntarget 1e-1\n").unwrap();
        assert_eq!(t.target, vec![0.9, 0.1]);
        assert_eq!(t.nontarget, vec![-0.25]);
        assert_eq!(Trials::parse(&t.to_text()).unwrap(), t);
        for bad in ["target", "target x", "impostor 0.3", "target 0.1 0.2", "target inf"] {
            assert!(Trials::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn cosine_trials_from_embeddings() {
        let e = vec![vec![1.0, 0.0], vec![2.0, 0.1], vec![0.0, 1.0]];
        let t = Trials::from_embeddings(&e, &[0, 0, 1]).unwrap();
        assert_eq!(t.target.len(), 1);
        assert_eq!(t.nontarget.len(), 2);
        assert_eq!(t.eer().unwrap(), 0.0);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    fn scores() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((-20i32..20).prop_map(|v| f64::from(v) / 4.0), 1..30)
    }

    proptest! {
        #[test]
        fn matches_threshold_sweep(pos in scores(), neg in scores()) {
            let e = eer(&pos, &neg).unwrap();
            prop_assert!((e - sweep_oracle(&pos, &neg)).abs() < 1e-12);
        }

        #[test]
        fn mirror_symmetry_and_canonical_range(pos in scores(), neg in scores()) {
            let e = eer(&pos, &neg).unwrap();
            let mp: Vec<f64> = neg.iter().map(|s| -s).collect();
            let mn: Vec<f64> = pos.iter().map(|s| -s).collect();
            prop_assert_eq!(eer(&mp, &mn).unwrap(), e);
            let swapped = eer_canonical(&neg, &pos).unwrap();
            prop_assert!((0.0..=0.5).contains(&swapped));
            prop_assert!((swapped - e.min(1.0 - e)).abs() < 1e-12);
        }
    }
}
