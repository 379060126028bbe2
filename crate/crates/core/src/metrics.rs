//! Open-set evaluation: TPIR, FPIR, the open-set ROC curve, operating-point
//! tables and feature-magnitude histograms.
//!
//! TPIR is the fraction of known probes whose best-scoring identity is the
//! correct one with a score at or above the threshold. FPIR is the fraction
//! of unknown (and background) probes whose best known-identity score reaches
//! the threshold. Rows where the garbage template wins never accept: they
//! count as failures for TPIR and as correct rejections for FPIR.

use crate::data::{ClassLabel, LabelGroup};
use crate::error::{Error, Result};
use crate::gallery::{ProbeFeature, ScoreMatrix};

/// One operating point of the open-set ROC curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub theta: f64,
    pub fpir: f64,
    pub tpir: f64,
}

/// Open-set ROC curve: points sorted by descending threshold, so FPIR and
/// TPIR are non-decreasing along the point list.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetCurve {
    pub points: Vec<CurvePoint>,
    pub num_known_rows: usize,
    pub num_unknown_rows: usize,
}

struct RowStats {
    /// Known rows that can accept correctly: not degenerate, not
    /// garbage-dominated, argmax at the true id. Holds the row max.
    known_eligible: Vec<f64>,
    /// Unknown/background rows that can fire: not degenerate, not
    /// garbage-dominated. Holds the max known-column score.
    unknown_firing: Vec<f64>,
    num_known: usize,
    num_unknown: usize,
}

fn row_stats(scores: &ScoreMatrix) -> Result<RowStats> {
    let mut stats = RowStats {
        known_eligible: Vec::new(),
        unknown_firing: Vec::new(),
        num_known: 0,
        num_unknown: 0,
    };
    for (idx, row) in scores.rows.iter().enumerate() {
        match row.true_label {
            ClassLabel::Known(id) => {
                stats.num_known += 1;
                if let Some((best_idx, best)) = row.best_known() {
                    if best_idx == id as usize && !row.garbage_dominates() {
                        stats.known_eligible.push(best);
                    }
                }
            }
            ClassLabel::Unknown | ClassLabel::Background => {
                stats.num_unknown += 1;
                if let Some((_, best)) = row.best_known() {
                    if !row.garbage_dominates() {
                        stats.unknown_firing.push(best);
                    }
                }
            }
            ClassLabel::Negative => {
                return Err(Error::Data(format!(
                    "score row {idx} carries a negative (training-only) label; \
                     probe sets hold known, unknown, or background samples"
                )));
            }
        }
    }
    Ok(stats)
}

/// True positive identification rate at threshold `theta`, over the known
/// probe rows.
pub fn tpir(scores: &ScoreMatrix, theta: f64) -> Result<f64> {
    let stats = row_stats(scores)?;
    if stats.num_known == 0 {
        return Err(Error::Data("TPIR is undefined without known probe rows".into()));
    }
    let hits = stats.known_eligible.iter().filter(|&&m| m >= theta).count();
    Ok(hits as f64 / stats.num_known as f64)
}

/// False positive identification rate at threshold `theta`, over the unknown
/// and background probe rows.
pub fn fpir(scores: &ScoreMatrix, theta: f64) -> Result<f64> {
    let stats = row_stats(scores)?;
    if stats.num_unknown == 0 {
        return Err(Error::Data(
            "FPIR is undefined without unknown or background probe rows".into(),
        ));
    }
    let fires = stats.unknown_firing.iter().filter(|&&m| m >= theta).count();
    Ok(fires as f64 / stats.num_unknown as f64)
}

/// Sweeps the threshold over every distinct observed row maximum (plus a
/// sentinel above the global maximum) and reports the exact step curve.
pub fn oroc_curve(scores: &ScoreMatrix) -> Result<OpenSetCurve> {
    let stats = row_stats(scores)?;
    if stats.num_known == 0 || stats.num_unknown == 0 {
        return Err(Error::Data(
            "the open-set ROC curve needs both known and unknown probe rows".into(),
        ));
    }

    let mut thresholds: Vec<f64> = Vec::new();
    for row in &scores.rows {
        if let Some((_, best)) = row.best_known() {
            thresholds.push(best);
        }
    }
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let sentinel = thresholds.first().map_or(1.0, |&m| m + 1.0);
    thresholds.insert(0, sentinel);

    // Descending row maxima; a pointer per list advances as theta drops.
    let mut eligible = stats.known_eligible.clone();
    eligible.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut firing = stats.unknown_firing.clone();
    firing.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut points = Vec::with_capacity(thresholds.len());
    let (mut ke, mut uf) = (0usize, 0usize);
    for &theta in &thresholds {
        while ke < eligible.len() && eligible[ke] >= theta {
            ke += 1;
        }
        while uf < firing.len() && firing[uf] >= theta {
            uf += 1;
        }
        points.push(CurvePoint {
            theta,
            fpir: uf as f64 / stats.num_unknown as f64,
            tpir: ke as f64 / stats.num_known as f64,
        });
    }

    debug_assert!(points.windows(2).all(|w| {
        w[0].theta > w[1].theta && w[0].fpir <= w[1].fpir && w[0].tpir <= w[1].tpir
    }));
    Ok(OpenSetCurve {
        points,
        num_known_rows: stats.num_known,
        num_unknown_rows: stats.num_unknown,
    })
}

/// TPIR read off the curve at each FPIR target: the best TPIR whose operating
/// point keeps FPIR at or under the target, with no interpolation. `None`
/// ("n/a") when no point qualifies or when the target is below the `1/|U|`
/// resolution of the unknown set.
pub fn tpir_at_fpir(curve: &OpenSetCurve, targets: &[f64]) -> Vec<(f64, Option<f64>)> {
    targets
        .iter()
        .map(|&target| {
            if curve.num_unknown_rows > 0 && 1.0 / curve.num_unknown_rows as f64 > target {
                return (target, None);
            }
            // Points are sorted by descending theta, so qualifying points
            // form a prefix; the last of them has the highest TPIR.
            let mut best = None;
            for p in &curve.points {
                if p.fpir <= target {
                    best = Some(p.tpir);
                } else {
                    break;
                }
            }
            (target, best)
        })
        .collect()
}

/// Histogram of compact-feature magnitudes per label group over shared
/// equal-width bins, with per-group medians.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeHistogram {
    /// `bins + 1` shared bin edges over the pooled magnitude range.
    pub edges: Vec<f64>,
    pub groups: Vec<GroupHistogram>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupHistogram {
    pub group: LabelGroup,
    pub counts: Vec<usize>,
    pub median: f64,
}

impl MagnitudeHistogram {
    pub fn group(&self, group: LabelGroup) -> Option<&GroupHistogram> {
        self.groups.iter().find(|g| g.group == group)
    }
}

/// Median without sorting: two order-statistic selections.
fn median_by_selection(values: &[f64]) -> f64 {
    let mut xs = values.to_vec();
    let n = xs.len();
    let (left, mid, _) = xs.select_nth_unstable_by(n / 2, |a, b| a.partial_cmp(b).unwrap());
    if n % 2 == 1 {
        *mid
    } else {
        let below = left.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (below + *mid) / 2.0
    }
}

/// Bins the L2 magnitudes of the given features into `bins` equal-width bins
/// shared across label groups.
pub fn magnitude_histogram(features: &[ProbeFeature], bins: usize) -> Result<MagnitudeHistogram> {
    if bins < 2 {
        return Err(Error::Config("histogram needs at least 2 bins".into()));
    }
    if features.is_empty() {
        return Err(Error::Data(
            "magnitude histogram is undefined on an empty feature list".into(),
        ));
    }
    let mut per_group: Vec<Vec<f64>> = vec![Vec::new(); LabelGroup::ALL.len()];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for f in features {
        let mag = f.feature.iter().map(|v| v * v).sum::<f64>().sqrt();
        lo = lo.min(mag);
        hi = hi.max(mag);
        let slot = LabelGroup::ALL
            .iter()
            .position(|&g| g == f.true_label.group())
            .unwrap();
        per_group[slot].push(mag);
    }
    let span = hi - lo;
    let width = span / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
    let bin_of = |mag: f64| -> usize {
        if span <= 0.0 {
            0
        } else {
            (((mag - lo) / span) * bins as f64).floor().min(bins as f64 - 1.0) as usize
        }
    };
    let groups = LabelGroup::ALL
        .iter()
        .zip(&per_group)
        .filter(|(_, mags)| !mags.is_empty())
        .map(|(&group, mags)| {
            let mut counts = vec![0usize; bins];
            for &m in mags {
                counts[bin_of(m)] += 1;
            }
            GroupHistogram {
                group,
                counts,
                median: median_by_selection(mags),
            }
        })
        .collect();
    Ok(MagnitudeHistogram { edges, groups })
}

/// CSV export of a curve: `theta,fpir,tpir`.
pub fn curve_to_csv(curve: &OpenSetCurve) -> String {
    let mut out = String::from("theta,fpir,tpir\n");
    for p in &curve.points {
        out.push_str(&format!("{},{},{}\n", p.theta, p.fpir, p.tpir));
    }
    out
}

/// CSV export of an operating-point table: `fpir_target,tpir`, with `n/a`
/// for unresolvable targets.
pub fn table_to_csv(table: &[(f64, Option<f64>)]) -> String {
    let mut out = String::from("fpir_target,tpir\n");
    for (target, tpir) in table {
        match tpir {
            Some(v) => out.push_str(&format!("{target},{v}\n")),
            None => out.push_str(&format!("{target},n/a\n")),
        }
    }
    out
}

/// CSV export of a magnitude histogram: `group,bin_lo,bin_hi,count`.
pub fn histogram_to_csv(hist: &MagnitudeHistogram) -> String {
    let mut out = String::from("group,bin_lo,bin_hi,count\n");
    for g in &hist.groups {
        for (k, &count) in g.counts.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                g.group.name(),
                hist.edges[k],
                hist.edges[k + 1],
                count
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::ScoreRow;
    use crate::rng::Rng;

    fn row(label: ClassLabel, scores: &[f64]) -> ScoreRow {
        ScoreRow {
            true_label: label,
            scores: scores.to_vec(),
            garbage: None,
            degenerate: false,
        }
    }

    /// Five-probe hand case: three knowns (two identified correctly above
    /// 0.6), two unknowns (one fires at 0.6).
    fn hand_case() -> ScoreMatrix {
        ScoreMatrix {
            num_known: 2,
            rows: vec![
                row(ClassLabel::Known(0), &[0.9, 0.2]),
                row(ClassLabel::Known(1), &[0.3, 0.8]),
                row(ClassLabel::Known(0), &[0.4, 0.6]),
                row(ClassLabel::Unknown, &[0.5, 0.1]),
                row(ClassLabel::Unknown, &[0.7, 0.65]),
            ],
        }
    }

    #[test]
    fn hand_case_tpir_and_fpir() {
        let m = hand_case();
        assert_eq!(tpir(&m, 0.6).unwrap(), 2.0 / 3.0);
        assert_eq!(fpir(&m, 0.6).unwrap(), 0.5);
        assert_eq!(fpir(&m, 0.45).unwrap(), 1.0);
    }

    #[test]
    fn thresholds_beyond_the_scores() {
        let m = hand_case();
        assert_eq!(tpir(&m, 2.0).unwrap(), 0.0);
        assert_eq!(fpir(&m, 2.0).unwrap(), 0.0);
        // theta = -1 makes the threshold vacuous: closed-set rank-1 accuracy.
        assert_eq!(tpir(&m, -1.0).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn metrics_reject_empty_partitions_and_negative_rows() {
        let knowns_only = ScoreMatrix {
            num_known: 1,
            rows: vec![row(ClassLabel::Known(0), &[0.5])],
        };
        assert!(tpir(&knowns_only, 0.0).is_ok());
        assert!(fpir(&knowns_only, 0.0).is_err());
        assert!(oroc_curve(&knowns_only).is_err());

        let with_negative = ScoreMatrix {
            num_known: 1,
            rows: vec![
                row(ClassLabel::Known(0), &[0.5]),
                row(ClassLabel::Negative, &[0.1]),
            ],
        };
        assert!(tpir(&with_negative, 0.0).is_err());
    }

    #[test]
    fn background_rows_pool_into_fpir() {
        let m = ScoreMatrix {
            num_known: 1,
            rows: vec![
                row(ClassLabel::Known(0), &[0.9]),
                row(ClassLabel::Unknown, &[0.7]),
                row(ClassLabel::Background, &[0.7]),
                row(ClassLabel::Background, &[0.1]),
            ],
        };
        // Two of the three unknown-or-background rows fire at 0.5.
        assert_eq!(fpir(&m, 0.5).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn garbage_dominated_rows_fail_tpir_and_reject_fpir() {
        let mut m = hand_case();
        // Give the correct known row a dominating garbage score.
        m.rows[0].garbage = Some(0.95);
        assert_eq!(tpir(&m, 0.6).unwrap(), 1.0 / 3.0);
        // Give the firing unknown a dominating garbage score.
        m.rows[4].garbage = Some(0.9);
        assert_eq!(fpir(&m, 0.6).unwrap(), 0.0);
    }

    #[test]
    fn curve_passes_through_the_hand_point() {
        let curve = oroc_curve(&hand_case()).unwrap();
        assert!(curve
            .points
            .iter()
            .any(|p| p.fpir == 0.5 && p.tpir == 2.0 / 3.0));
        // Sentinel above the maximum has FPIR 0.
        assert_eq!(curve.points[0].fpir, 0.0);
        assert_eq!(curve.points[0].tpir, 0.0);
    }

    #[test]
    fn perfect_scores_reach_the_ideal_corner() {
        let m = ScoreMatrix {
            num_known: 2,
            rows: vec![
                row(ClassLabel::Known(0), &[1.0, -0.5]),
                row(ClassLabel::Known(1), &[-0.5, 1.0]),
                row(ClassLabel::Unknown, &[-1.0, -1.0]),
            ],
        };
        let curve = oroc_curve(&m).unwrap();
        assert!(curve.points.iter().any(|p| p.fpir == 0.0 && p.tpir == 1.0));
    }

    #[test]
    fn curve_matches_pointwise_recomputation() {
        let mut rng = Rng::new(13);
        let rows: Vec<ScoreRow> = (0..500)
            .map(|i| {
                let label = if i % 3 == 0 {
                    ClassLabel::Unknown
                } else {
                    ClassLabel::Known(rng.range(4) as u32)
                };
                row(label, &[rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0),
                             rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)])
            })
            .collect();
        let m = ScoreMatrix { num_known: 4, rows };
        let curve = oroc_curve(&m).unwrap();
        for p in &curve.points {
            assert_eq!(p.tpir, tpir(&m, p.theta).unwrap(), "theta {}", p.theta);
            assert_eq!(p.fpir, fpir(&m, p.theta).unwrap(), "theta {}", p.theta);
        }
    }

    #[test]
    fn operating_points_follow_the_hand_case() {
        let curve = oroc_curve(&hand_case()).unwrap();
        let table = tpir_at_fpir(&curve, &[1.0, 0.5, 1e-2, 1e-3]);
        assert_eq!(table[0], (1.0, Some(2.0 / 3.0)));
        assert_eq!(table[1], (0.5, Some(2.0 / 3.0)));
        // Two unknowns resolve FPIR only down to 1/2.
        assert_eq!(table[2], (1e-2, None));
        assert_eq!(table[3], (1e-3, None));
    }

    #[test]
    fn resolution_rule_uses_the_unknown_count() {
        let mut rows = vec![row(ClassLabel::Known(0), &[0.9])];
        for _ in 0..100 {
            rows.push(row(ClassLabel::Unknown, &[-0.5]));
        }
        let m = ScoreMatrix { num_known: 1, rows };
        let curve = oroc_curve(&m).unwrap();
        let table = tpir_at_fpir(&curve, &[1e-2, 1e-3]);
        assert_eq!(table[0].1, Some(1.0));
        assert_eq!(table[1].1, None, "1/|U| = 1e-2 exceeds the 1e-3 target");
    }

    fn feat(label: ClassLabel, v: &[f64]) -> ProbeFeature {
        ProbeFeature {
            true_label: label,
            feature: v.to_vec(),
        }
    }

    #[test]
    fn histogram_counts_partition_each_group() {
        let mut rng = Rng::new(21);
        let features: Vec<ProbeFeature> = (0..200)
            .map(|i| {
                let label = match i % 3 {
                    0 => ClassLabel::Known(0),
                    1 => ClassLabel::Unknown,
                    _ => ClassLabel::Background,
                };
                feat(label, &[rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)])
            })
            .collect();
        let hist = magnitude_histogram(&features, 10).unwrap();
        assert_eq!(hist.edges.len(), 11);
        for g in &hist.groups {
            let group_size = features
                .iter()
                .filter(|f| f.true_label.group() == g.group)
                .count();
            assert_eq!(g.counts.iter().sum::<usize>(), group_size);
        }
    }

    #[test]
    fn histogram_degenerate_spread_occupies_one_bin() {
        let features = vec![
            feat(ClassLabel::Known(0), &[1.0, 0.0]),
            feat(ClassLabel::Known(0), &[0.0, 1.0]),
            feat(ClassLabel::Unknown, &[0.6, 0.8]),
        ];
        let hist = magnitude_histogram(&features, 5).unwrap();
        let known = hist.group(LabelGroup::Known).unwrap();
        assert_eq!(known.counts[0], 2);
        assert!(known.counts[1..].iter().all(|&c| c == 0));
        assert_eq!(known.median, 1.0);
    }

    #[test]
    fn histogram_medians_match_a_sort_oracle() {
        let mut rng = Rng::new(22);
        for n in [1usize, 2, 3, 10, 101] {
            let features: Vec<ProbeFeature> = (0..n)
                .map(|_| feat(ClassLabel::Unknown, &[rng.uniform_in(0.0, 5.0)]))
                .collect();
            let hist = magnitude_histogram(&features, 4).unwrap();
            let mut mags: Vec<f64> = features.iter().map(|f| f.feature[0].abs()).collect();
            mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expected = if n % 2 == 1 {
                mags[n / 2]
            } else {
                (mags[n / 2 - 1] + mags[n / 2]) / 2.0
            };
            assert_eq!(hist.group(LabelGroup::Unknown).unwrap().median, expected);
        }
    }

    #[test]
    fn histogram_rejects_bad_inputs() {
        assert!(magnitude_histogram(&[], 10).is_err());
        let features = vec![feat(ClassLabel::Known(0), &[1.0])];
        assert!(magnitude_histogram(&features, 1).is_err());
    }

    #[test]
    fn csv_exports_have_the_fixed_headers() {
        let curve = oroc_curve(&hand_case()).unwrap();
        assert!(curve_to_csv(&curve).starts_with("theta,fpir,tpir\n"));
        let table = tpir_at_fpir(&curve, &[1.0, 1e-3]);
        let csv = table_to_csv(&table);
        assert!(csv.starts_with("fpir_target,tpir\n"));
        assert!(csv.contains("0.001,n/a"));
        let hist = magnitude_histogram(
            &[feat(ClassLabel::Known(0), &[1.0]), feat(ClassLabel::Unknown, &[2.0])],
            2,
        )
        .unwrap();
        let csv = histogram_to_csv(&hist);
        assert!(csv.starts_with("group,bin_lo,bin_hi,count\n"));
        assert!(csv.contains("known,"));
        assert!(csv.contains("unknown,"));
    }
}
