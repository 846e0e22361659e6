//! Strategy comparison by per-sample F1 and per-(emotion, intensity)
//! performance tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{IntensityLevel, LabelAssignment, LabelSchema, Track};
use crate::eval::{label_columns, per_sample_f1, EvalError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCounts {
    pub base_better: usize,
    pub pairwise_better: usize,
    pub tie: usize,
}

impl BucketCounts {
    pub fn total(&self) -> usize {
        self.base_better + self.pairwise_better + self.tie
    }
}

/// Comparison counts bucketed by the number of gold emotions per sample.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImprovementHistogram {
    pub buckets: BTreeMap<usize, BucketCounts>,
}

impl ImprovementHistogram {
    pub fn total(&self) -> usize {
        self.buckets.values().map(BucketCounts::total).sum()
    }

    /// `bucket,base_better,pairwise_better,tie`
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bucket", "base_better", "pairwise_better", "tie"])?;
        for (bucket, c) in &self.buckets {
            w.serialize((bucket, c.base_better, c.pairwise_better, c.tie))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Grouped bar chart of improved samples per bucket.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 360.0;
        const MARGIN: f64 = 48.0;
        let max = self
            .buckets
            .values()
            .map(|c| c.base_better.max(c.pairwise_better).max(c.tie))
            .max()
            .unwrap_or(0)
            .max(1) as f64;
        let n = self.buckets.len().max(1) as f64;
        let group = (W - 2.0 * MARGIN) / n;
        let bar = group / 4.0;
        let plot_h = H - 2.0 * MARGIN;
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{MARGIN}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
            y = H - MARGIN,
            x2 = W - MARGIN
        );
        let series = [
            ("base better", "#4c72b0"),
            ("pairwise better", "#dd8452"),
            ("tie", "#999999"),
        ];
        for (i, (bucket, c)) in self.buckets.iter().enumerate() {
            let x0 = MARGIN + group * i as f64 + bar / 2.0;
            for (s, value) in [c.base_better, c.pairwise_better, c.tie]
                .into_iter()
                .enumerate()
            {
                let h = plot_h * value as f64 / max;
                let _ = writeln!(
                    svg,
                    r#"<rect x="{x:.1}" y="{y:.1}" width="{bar:.1}" height="{h:.1}" fill="{fill}"><title>{label}: {value}</title></rect>"#,
                    x = x0 + bar * s as f64,
                    y = H - MARGIN - h,
                    fill = series[s].1,
                    label = series[s].0,
                );
            }
            let _ = writeln!(
                svg,
                r#"<text x="{x:.1}" y="{y}" text-anchor="middle">{bucket}</text>"#,
                x = x0 + 1.5 * bar,
                y = H - MARGIN + 16.0
            );
        }
        for (s, (label, fill)) in series.iter().enumerate() {
            let y = 16.0 + 16.0 * s as f64;
            let _ = writeln!(
                svg,
                r#"<rect x="{x}" y="{y}" width="10" height="10" fill="{fill}"/>"#,
                x = W - 160.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{x}" y="{ty}">{label}</text>"#,
                x = W - 144.0,
                ty = y + 9.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" text-anchor="middle">gold emotions per sample</text>"#,
            x = W / 2.0,
            y = H - 8.0
        );
        svg.push_str("</svg>\n");
        svg
    }
}

/// Compares the per-sample F1 of two prediction sets against the golds.
pub fn improvement_distribution(
    preds_base: &[(String, LabelAssignment)],
    preds_pairwise: &[(String, LabelAssignment)],
    golds: &[(String, LabelAssignment)],
) -> Result<ImprovementHistogram, EvalError> {
    let index = |preds: &[(String, LabelAssignment)],
                 name: &str|
     -> Result<HashMap<String, LabelAssignment>, EvalError> {
        if preds.len() != golds.len() {
            return Err(EvalError::IdMismatch(format!(
                "{} {name} predictions for {} gold samples",
                preds.len(),
                golds.len()
            )));
        }
        Ok(preds.iter().cloned().collect())
    };
    let base = index(preds_base, "base")?;
    let pairwise = index(preds_pairwise, "pairwise")?;
    let mut hist = ImprovementHistogram::default();
    for (id, gold) in golds {
        let lookup = |m: &HashMap<String, LabelAssignment>| {
            m.get(id)
                .cloned()
                .ok_or_else(|| EvalError::IdMismatch(format!("no prediction for `{id}`")))
        };
        let fb = per_sample_f1(&lookup(&base)?, gold);
        let fp = per_sample_f1(&lookup(&pairwise)?, gold);
        let counts = hist.buckets.entry(gold.active().count()).or_default();
        if fb > fp {
            counts.base_better += 1;
        } else if fp > fb {
            counts.pairwise_better += 1;
        } else {
            counts.tie += 1;
        }
    }
    Ok(hist)
}

/// One (emotion, gold intensity) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityCell {
    pub emotion: String,
    pub level: u8,
    pub support: usize,
    /// `None` for cells without support.
    pub exact_match_rate: Option<f64>,
    /// This cell's share of the emotion's Pearson r: the cell's summed
    /// co-deviation divided by the emotion's normalizer. Cells of one
    /// emotion sum to its r; `None` when the emotion is degenerate.
    pub pearson_contribution: Option<f64>,
    pub zero_support: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityTable {
    pub cells: Vec<IntensityCell>,
}

impl IntensityTable {
    /// `emotion,level,support,exact_match_rate` (empty rate for zero support).
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["emotion", "level", "support", "exact_match_rate"])?;
        for c in &self.cells {
            let rate = c
                .exact_match_rate
                .map(|r| r.to_string())
                .unwrap_or_default();
            let level = IntensityLevel::from_value(c.level)
                .expect("valid level")
                .name();
            w.write_record([c.emotion.as_str(), level, &c.support.to_string(), &rate])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Support, exact-match rate and Pearson share for every (emotion, level)
/// pair, pooled over all samples given (all languages of a mixed set).
pub fn emotion_intensity_performance(
    preds: &[(String, LabelAssignment)],
    golds: &[(String, LabelAssignment)],
    schema: &LabelSchema,
) -> Result<IntensityTable, EvalError> {
    if schema.track() != Track::B {
        return Err(EvalError::TrackMismatch {
            expected: Track::B,
            found: schema.track(),
        });
    }
    let by_id: HashMap<&str, &LabelAssignment> =
        preds.iter().map(|(id, a)| (id.as_str(), a)).collect();
    if preds.len() != golds.len() || by_id.len() != preds.len() {
        return Err(EvalError::IdMismatch(
            "prediction and gold ids differ".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(golds.len());
    for (id, gold) in golds {
        let pred = by_id
            .get(id.as_str())
            .ok_or_else(|| EvalError::IdMismatch(format!("no prediction for `{id}`")))?;
        for a in [*pred, gold] {
            if a.track() != Track::B {
                return Err(EvalError::TrackMismatch {
                    expected: Track::B,
                    found: a.track(),
                });
            }
        }
        pairs.push((*pred, gold));
    }

    let mut cells = Vec::with_capacity(schema.len() * 4);
    for emotion in schema.labels() {
        let (p, g) = label_columns(&pairs, emotion);
        let n = p.len() as f64;
        let (mp, mg) = if p.is_empty() {
            (0.0, 0.0)
        } else {
            (p.iter().sum::<f64>() / n, g.iter().sum::<f64>() / n)
        };
        let spp: f64 = p.iter().map(|x| (x - mp).powi(2)).sum();
        let sgg: f64 = g.iter().map(|x| (x - mg).powi(2)).sum();
        let norm = (spp.sqrt() * sgg.sqrt()).max(0.0);
        for level in IntensityLevel::ALL {
            let lv = f64::from(level.value());
            let members: Vec<(f64, f64)> = p
                .iter()
                .zip(&g)
                .filter(|(_, &gv)| gv == lv)
                .map(|(&pv, &gv)| (pv, gv))
                .collect();
            let support = members.len();
            let hits = members.iter().filter(|(pv, gv)| pv == gv).count();
            let codev: f64 = members.iter().map(|(pv, gv)| (pv - mp) * (gv - mg)).sum();
            cells.push(IntensityCell {
                emotion: emotion.clone(),
                level: level.value(),
                support,
                exact_match_rate: (support > 0).then(|| hits as f64 / support as f64),
                pearson_contribution: (norm > 0.0).then(|| codev / norm),
                zero_support: support == 0,
            });
        }
    }
    Ok(IntensityTable { cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema_a() -> LabelSchema {
        LabelSchema::new(["anger", "fear", "joy", "sadness"], Track::A).unwrap()
    }

    fn set(labels: &[&str]) -> LabelAssignment {
        LabelAssignment::with_active(&schema_a(), labels.iter().copied(), 1).unwrap()
    }

    fn ids(items: Vec<LabelAssignment>) -> Vec<(String, LabelAssignment)> {
        items
            .into_iter()
            .enumerate()
            .map(|(i, a)| (format!("s{i}"), a))
            .collect()
    }

    #[test]
    fn identical_predictions_tie() {
        let golds = ids(vec![set(&["fear"]), set(&[]), set(&["joy", "anger"])]);
        let preds = ids(vec![set(&["joy"]), set(&["fear"]), set(&["joy"])]);
        let h = improvement_distribution(&preds, &preds, &golds).unwrap();
        assert_eq!(h.total(), 3);
        assert!(h.buckets.values().all(|c| c.tie == c.total()));
    }

    #[test]
    fn pairwise_better_on_two_emotion_sample() {
        let golds = ids(vec![set(&["fear", "joy"])]);
        let h = improvement_distribution(&ids(vec![set(&[])]), &golds, &golds).unwrap();
        assert_eq!(
            h.buckets[&2],
            BucketCounts {
                base_better: 0,
                pairwise_better: 1,
                tie: 0
            }
        );
    }

    #[test]
    fn six_sample_fixture() {
        // per-sample F1 (base, pairwise):
        // s0 gold {}          base {}        1.0  pair {fear}     0.0 -> base, bucket 0
        // s1 gold {fear}      base {fear}    1.0  pair {fear}     1.0 -> tie,  bucket 1
        // s2 gold {joy}       base {}        0.0  pair {joy,fear} 2/3 -> pair, bucket 1
        // s3 gold {anger,joy} base {anger}   2/3  pair {anger,joy} 1.0 -> pair, bucket 2
        // s4 gold {anger,joy} base {a,j}     1.0  pair {joy}      2/3 -> base, bucket 2
        // s5 gold {a,f,j}     base {sadness} 0.0  pair {}         0.0 -> tie,  bucket 3
        let golds = ids(vec![
            set(&[]),
            set(&["fear"]),
            set(&["joy"]),
            set(&["anger", "joy"]),
            set(&["anger", "joy"]),
            set(&["anger", "fear", "joy"]),
        ]);
        let base = ids(vec![
            set(&[]),
            set(&["fear"]),
            set(&[]),
            set(&["anger"]),
            set(&["anger", "joy"]),
            set(&["sadness"]),
        ]);
        let pairwise = ids(vec![
            set(&["fear"]),
            set(&["fear"]),
            set(&["joy", "fear"]),
            set(&["anger", "joy"]),
            set(&["joy"]),
            set(&[]),
        ]);
        let h = improvement_distribution(&base, &pairwise, &golds).unwrap();
        let c = |b, p, t| BucketCounts {
            base_better: b,
            pairwise_better: p,
            tie: t,
        };
        let expected = BTreeMap::from([
            (0, c(1, 0, 0)),
            (1, c(0, 1, 1)),
            (2, c(1, 1, 0)),
            (3, c(0, 0, 1)),
        ]);
        assert_eq!(h.buckets, expected);

        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("bucket,base_better,pairwise_better,tie\n0,1,0,0\n"));
        assert!(h.to_svg().starts_with("<svg"));
    }

    fn schema_b() -> LabelSchema {
        LabelSchema::new(["anger", "joy"], Track::B).unwrap()
    }

    fn lv(anger: u8, joy: u8) -> LabelAssignment {
        LabelAssignment::from_pairs(&schema_b(), [("anger", anger), ("joy", joy)]).unwrap()
    }

    #[test]
    fn intensity_perfect_and_zero_support() {
        let golds = ids(vec![lv(0, 1), lv(3, 1), lv(1, 2)]);
        let t = emotion_intensity_performance(&golds, &golds, &schema_b()).unwrap();
        assert_eq!(t.cells.len(), 8);
        for c in &t.cells {
            if c.support > 0 {
                assert_eq!(c.exact_match_rate, Some(1.0));
            } else {
                assert!(c.zero_support);
                assert_eq!(c.exact_match_rate, None);
            }
        }
        let anger_high = t
            .cells
            .iter()
            .find(|c| c.emotion == "anger" && c.level == 3)
            .unwrap();
        assert_eq!(anger_high.support, 1);
        let joy_none = t
            .cells
            .iter()
            .find(|c| c.emotion == "joy" && c.level == 0)
            .unwrap();
        assert!(joy_none.zero_support);
    }

    #[test]
    fn intensity_eight_sample_fixture() {
        // anger gold: 0 0 1 1 2 2 3 3, pred: 0 1 1 1 2 1 3 2
        //   level0: 1/2, level1: 2/2, level2: 1/2, level3: 1/2
        // joy gold:   0 0 0 0 1 1 2 3, pred: 0 0 0 1 1 0 2 2
        //   level0: 3/4, level1: 1/2, level2: 1/1, level3: 0/1
        let ga = [0, 0, 1, 1, 2, 2, 3, 3];
        let pa = [0, 1, 1, 1, 2, 1, 3, 2];
        let gj = [0, 0, 0, 0, 1, 1, 2, 3];
        let pj = [0, 0, 0, 1, 1, 0, 2, 2];
        let golds = ids((0..8).map(|i| lv(ga[i], gj[i])).collect());
        let preds = ids((0..8).map(|i| lv(pa[i], pj[i])).collect());
        let t = emotion_intensity_performance(&preds, &golds, &schema_b()).unwrap();
        let rates: Vec<Option<f64>> = t.cells.iter().map(|c| c.exact_match_rate).collect();
        assert_eq!(
            rates,
            [0.5, 1.0, 0.5, 0.5, 0.75, 0.5, 1.0, 0.0].map(Some).to_vec()
        );
        let supports: usize = t.cells.iter().map(|c| c.support).sum();
        assert_eq!(supports, 16);

        // contributions of one emotion add up to its Pearson r
        let r = crate::eval::pearson(&pa.map(f64::from), &ga.map(f64::from)).unwrap();
        let sum: f64 = t.cells[..4]
            .iter()
            .map(|c| c.pearson_contribution.unwrap())
            .sum();
        assert!((sum - r).abs() < 1e-12);

        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let csv = String::from_utf8(buf).unwrap();
        assert!(csv.starts_with("emotion,level,support,exact_match_rate\nanger,none,2,0.5\n"));
    }

    #[test]
    fn intensity_rejects_track_a() {
        let golds = ids(vec![set(&["fear"])]);
        assert!(matches!(
            emotion_intensity_performance(&golds, &golds, &schema_a()),
            Err(EvalError::TrackMismatch { .. })
        ));
    }
}
