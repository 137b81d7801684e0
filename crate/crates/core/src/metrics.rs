//! Evaluation: ground-truth boxes from body markers, IoU, TP rate and
//! corpus aggregates.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;
use crate::cascade::ResultRecord;
use crate::geometry::ImagePoint;

pub const DEFAULT_TAU: f64 = 0.3;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.4;
pub const DEFAULT_INIT_SKIP: usize = 30;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("degenerate ground-truth box for subject {subject} in frame {frame}")]
    DegenerateGt { subject: String, frame: u64 },
    #[error("TP rate is undefined over zero frames")]
    NoFrames,
    #[error("no subject has evaluable frames")]
    NoEvaluableSubjects,
    #[error("markers: {0}")]
    Markers(String),
    #[error("markers CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerName {
    HeadTop,
    NeckLeft,
    NeckRight,
    ShoulderLeft,
    ShoulderRight,
    WaistLeft,
    WaistRight,
    ToeLeft,
    ToeRight,
}

impl MarkerName {
    pub const ALL: [MarkerName; 9] = [
        MarkerName::HeadTop,
        MarkerName::NeckLeft,
        MarkerName::NeckRight,
        MarkerName::ShoulderLeft,
        MarkerName::ShoulderRight,
        MarkerName::WaistLeft,
        MarkerName::WaistRight,
        MarkerName::ToeLeft,
        MarkerName::ToeRight,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// The nine annotated body markers of one subject in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerSet {
    pub frame_id: u64,
    pub subject_id: String,
    points: [ImagePoint; 9],
}

impl MarkerSet {
    pub fn new(frame_id: u64, subject_id: impl Into<String>, points: [ImagePoint; 9]) -> Result<Self, MetricsError> {
        if points.iter().any(|p| !(p.u.is_finite() && p.v.is_finite())) {
            return Err(MetricsError::Markers("non-finite marker coordinate".into()));
        }
        Ok(Self {
            frame_id,
            subject_id: subject_id.into(),
            points,
        })
    }

    pub fn get(&self, name: MarkerName) -> ImagePoint {
        self.points[name.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (MarkerName, ImagePoint)> + '_ {
        MarkerName::ALL.iter().map(|&n| (n, self.get(n)))
    }
}

/// Box from the head top, the lowest toe and the horizontal extremes of all
/// markers. Marker coordinates index pixels, so the far edges get `+1`.
pub fn gt_bbox(markers: &MarkerSet) -> Result<BBox, MetricsError> {
    let head = markers.get(MarkerName::HeadTop);
    let bottom = markers
        .get(MarkerName::ToeLeft)
        .v
        .max(markers.get(MarkerName::ToeRight).v);
    let (left, right) = markers
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, p)| {
            (lo.min(p.u), hi.max(p.u))
        });
    if !(right > left && bottom > head.v) {
        return Err(MetricsError::DegenerateGt {
            subject: markers.subject_id.clone(),
            frame: markers.frame_id,
        });
    }
    Ok(BBox::new(left, head.v, right + 1.0, bottom + 1.0))
}

pub fn iou(d: &BBox, gt: &BBox) -> f64 {
    let inter = d.intersection(gt).area();
    let union = d.area() + gt.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// IoU of the unique survivor with the ground truth; 0 without a unique survivor.
pub fn frame_iou(result: &ResultRecord, gt: &BBox) -> f64 {
    match result.survivors.as_slice() {
        [only] if result.unique => iou(&only.bbox, gt),
        _ => 0.0,
    }
}

pub fn frame_correct(result: &ResultRecord, gt: &BBox, tau: f64) -> bool {
    result.unique && frame_iou(result, gt) >= tau
}

pub fn tp_rate(flags: &[bool]) -> Result<f64, MetricsError> {
    if flags.is_empty() {
        return Err(MetricsError::NoFrames);
    }
    let correct = flags.iter().filter(|&&f| f).count();
    Ok(100.0 * correct as f64 / flags.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub frame_id: u64,
    pub correct: bool,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSeries {
    pub subject_id: String,
    /// Outcomes in ascending frame order.
    pub frames: Vec<FrameOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectReport {
    pub subject_id: String,
    pub tp_rate_percent: f64,
    pub mean_iou: f64,
    pub frames_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub subjects_retrieved: usize,
    pub avg_tp_percent: f64,
    /// Mean IoU over correctly retrieved frames only (0 when there are none).
    pub avg_iou_correct: f64,
    pub avg_iou_all: f64,
    pub frac_iou_ge_threshold: f64,
    pub iou_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_subject: Vec<SubjectReport>,
    pub corpus: CorpusReport,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Drops the first `init_skip` frames of every subject and summarizes the rest.
pub fn aggregate(
    series: &[SubjectSeries],
    iou_threshold: f64,
    init_skip: usize,
) -> Result<EvaluationReport, MetricsError> {
    let mut ordered: Vec<&SubjectSeries> = series.iter().collect();
    ordered.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));

    let mut per_subject = Vec::new();
    let mut pooled: Vec<FrameOutcome> = Vec::new();
    for s in ordered {
        let mut frames = s.frames.clone();
        frames.sort_by_key(|f| f.frame_id);
        let evaluated: Vec<FrameOutcome> = frames.into_iter().skip(init_skip).collect();
        if evaluated.is_empty() {
            log::warn!(
                "subject {} has no frames after the {init_skip}-frame initialization window; excluded",
                s.subject_id
            );
            continue;
        }
        let flags: Vec<bool> = evaluated.iter().map(|f| f.correct).collect();
        per_subject.push(SubjectReport {
            subject_id: s.subject_id.clone(),
            tp_rate_percent: tp_rate(&flags)?,
            mean_iou: mean(evaluated.iter().map(|f| f.iou)).unwrap_or(0.0),
            frames_evaluated: evaluated.len(),
        });
        pooled.extend(evaluated);
    }
    if per_subject.is_empty() {
        return Err(MetricsError::NoEvaluableSubjects);
    }

    let at_or_above = pooled.iter().filter(|f| f.iou >= iou_threshold).count();
    let corpus = CorpusReport {
        subjects_retrieved: per_subject.iter().filter(|s| s.tp_rate_percent > 0.0).count(),
        avg_tp_percent: mean(per_subject.iter().map(|s| s.tp_rate_percent)).unwrap_or(0.0),
        avg_iou_correct: mean(pooled.iter().filter(|f| f.correct).map(|f| f.iou)).unwrap_or(0.0),
        avg_iou_all: mean(pooled.iter().map(|f| f.iou)).unwrap_or(0.0),
        frac_iou_ge_threshold: at_or_above as f64 / pooled.len() as f64,
        iou_threshold,
    };
    Ok(EvaluationReport { per_subject, corpus })
}

/// Scores every annotated (subject, frame) against the retrieval stream.
/// Frames without a result record count as failures.
pub fn evaluate_results(
    results: &[ResultRecord],
    markers: &[MarkerSet],
    tau: f64,
) -> Result<Vec<SubjectSeries>, MetricsError> {
    let by_frame: BTreeMap<u64, &ResultRecord> = results.iter().map(|r| (r.frame_id, r)).collect();
    let mut subjects: BTreeMap<&str, Vec<FrameOutcome>> = BTreeMap::new();
    for m in markers {
        let gt = gt_bbox(m)?;
        let outcome = match by_frame.get(&m.frame_id) {
            Some(r) => FrameOutcome {
                frame_id: m.frame_id,
                correct: frame_correct(r, &gt, tau),
                iou: frame_iou(r, &gt),
            },
            None => FrameOutcome {
                frame_id: m.frame_id,
                correct: false,
                iou: 0.0,
            },
        };
        subjects.entry(&m.subject_id).or_default().push(outcome);
    }
    Ok(subjects
        .into_iter()
        .map(|(id, mut frames)| {
            frames.sort_by_key(|f| f.frame_id);
            SubjectSeries {
                subject_id: id.to_string(),
                frames,
            }
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct MarkerRow {
    frame_id: u64,
    subject_id: String,
    marker_name: MarkerName,
    u: f64,
    v: f64,
}

/// Reads `frame_id,subject_id,marker_name,u,v` rows; every (frame, subject)
/// must list all nine markers exactly once.
pub fn read_markers_csv<R: Read>(reader: R) -> Result<Vec<MarkerSet>, MetricsError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut groups: BTreeMap<(u64, String), [Option<ImagePoint>; 9]> = BTreeMap::new();
    for (line, row) in rdr.deserialize::<MarkerRow>().enumerate() {
        let row = row?;
        let slot = &mut groups.entry((row.frame_id, row.subject_id.clone())).or_default()[row.marker_name.index()];
        if slot.is_some() {
            return Err(MetricsError::Markers(format!(
                "row {}: duplicate {:?} for subject {} in frame {}",
                line + 2,
                row.marker_name,
                row.subject_id,
                row.frame_id
            )));
        }
        *slot = Some(ImagePoint::distorted(row.u, row.v));
    }
    groups
        .into_iter()
        .map(|((frame_id, subject_id), pts)| {
            let mut points = [ImagePoint::distorted(0.0, 0.0); 9];
            for (i, p) in pts.iter().enumerate() {
                points[i] = p.ok_or_else(|| {
                    MetricsError::Markers(format!(
                        "subject {subject_id} in frame {frame_id} lacks {:?}",
                        MarkerName::ALL[i]
                    ))
                })?;
            }
            MarkerSet::new(frame_id, subject_id, points)
        })
        .collect()
}

pub fn write_markers_csv<W: Write>(writer: W, markers: &[MarkerSet]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    for m in markers {
        for (name, p) in m.iter() {
            w.serialize(MarkerRow {
                frame_id: m.frame_id,
                subject_id: m.subject_id.clone(),
                marker_name: name,
                u: p.u,
                v: p.v,
            })?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_subject_csv<W: Write>(writer: W, report: &EvaluationReport) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in &report.per_subject {
        w.serialize(s)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{Stage, SurvivorRecord};
    use proptest::prelude::*;

    fn markers(pts: [(f64, f64); 9]) -> MarkerSet {
        MarkerSet::new(1, "s", pts.map(|(u, v)| ImagePoint::distorted(u, v))).unwrap()
    }

    // order: head, neck L/R, shoulder L/R, waist L/R, toe L/R
    fn example_markers() -> MarkerSet {
        markers([
            (50.0, 10.0),
            (47.0, 25.0),
            (53.0, 25.0),
            (40.0, 30.0),
            (62.0, 30.0),
            (42.0, 70.0),
            (58.0, 70.0),
            (48.0, 120.0),
            (60.0, 122.0),
        ])
    }

    fn record(unique: bool, boxes: &[BBox]) -> ResultRecord {
        ResultRecord {
            frame_id: 1,
            survivors: boxes
                .iter()
                .enumerate()
                .map(|(i, b)| SurvivorRecord {
                    detection_id: format!("d{i}"),
                    height_cm: 170.0,
                    bbox: *b,
                    top_color: None,
                    gender: None,
                })
                .collect(),
            decision_stage: if unique { Stage::Height } else { Stage::Exhausted },
            unique,
        }
    }

    #[test]
    fn gt_box_from_markers() {
        assert_eq!(gt_bbox(&example_markers()).unwrap(), BBox::new(40.0, 10.0, 63.0, 123.0));
    }

    #[test]
    fn coincident_markers_are_degenerate() {
        assert!(matches!(
            gt_bbox(&markers([(5.0, 5.0); 9])),
            Err(MetricsError::DegenerateGt { .. })
        ));
    }

    #[test]
    fn symmetric_pose_gives_symmetric_box() {
        let m = markers([
            (50.0, 0.0),
            (46.0, 20.0),
            (54.0, 20.0),
            (38.0, 25.0),
            (62.0, 25.0),
            (41.0, 60.0),
            (59.0, 60.0),
            (44.0, 110.0),
            (56.0, 110.0),
        ]);
        let b = gt_bbox(&m).unwrap();
        assert_eq!(50.0 - b.x0, (b.x1 - 1.0) - 50.0);
    }

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 0.0, 15.0, 10.0)), 50.0 / 150.0);
    }

    #[test]
    fn correctness_predicate() {
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert!(frame_correct(
            &record(true, &[BBox::new(0.0, 0.0, 10.0, 9.0)]),
            &gt,
            DEFAULT_TAU
        ));
        assert!(!frame_correct(&record(false, &[gt, gt]), &gt, DEFAULT_TAU));
        assert!(!frame_correct(
            &record(true, &[BBox::new(50.0, 50.0, 60.0, 60.0)]),
            &gt,
            DEFAULT_TAU
        ));
        assert!(!frame_correct(&record(false, &[]), &gt, DEFAULT_TAU));
    }

    #[test]
    fn tp_rates() {
        assert_eq!(tp_rate(&[false; 50]).unwrap(), 0.0);
        assert_eq!(tp_rate(&[true; 13]).unwrap(), 100.0);
        let flags = [true, true, false, true, false, true, false, true];
        assert_eq!(tp_rate(&flags).unwrap(), 62.5);
        assert!(matches!(tp_rate(&[]), Err(MetricsError::NoFrames)));
    }

    fn series(id: &str, frames: &[(bool, f64)]) -> SubjectSeries {
        SubjectSeries {
            subject_id: id.into(),
            frames: frames
                .iter()
                .enumerate()
                .map(|(i, &(correct, iou))| FrameOutcome {
                    frame_id: i as u64,
                    correct,
                    iou,
                })
                .collect(),
        }
    }

    #[test]
    fn aggregate_all_correct() {
        let r = aggregate(&[series("a", &[(true, 1.0); 5])], 0.4, 0).unwrap();
        assert_eq!(r.corpus.avg_tp_percent, 100.0);
        assert_eq!(r.corpus.avg_iou_correct, 1.0);
        assert_eq!(r.corpus.frac_iou_ge_threshold, 1.0);
        assert_eq!(r.corpus.subjects_retrieved, 1);
    }

    #[test]
    fn aggregate_means_subject_rates() {
        let r = aggregate(
            &[series("a", &[(true, 0.8); 4]), series("b", &[(false, 0.0); 2])],
            0.4,
            0,
        )
        .unwrap();
        assert_eq!(r.corpus.avg_tp_percent, 50.0);
        assert_eq!(r.corpus.subjects_retrieved, 1);
    }

    #[test]
    fn aggregate_three_frame_fixture() {
        // frames: correct/0.9, incorrect/0.35, correct/0.5
        let r = aggregate(&[series("a", &[(true, 0.9), (false, 0.35), (true, 0.5)])], 0.4, 0).unwrap();
        let s = &r.per_subject[0];
        assert_eq!(s.frames_evaluated, 3);
        assert!((s.tp_rate_percent - 200.0 / 3.0).abs() < 1e-12);
        assert!((s.mean_iou - 1.75 / 3.0).abs() < 1e-12);
        assert!((r.corpus.avg_iou_correct - 0.7).abs() < 1e-12);
        assert!((r.corpus.frac_iou_ge_threshold - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn init_skip_and_exclusion() {
        let r = aggregate(
            &[
                series("a", &[(false, 0.0), (false, 0.0), (true, 1.0)]),
                series("b", &[(true, 1.0); 2]),
            ],
            0.4,
            2,
        )
        .unwrap();
        assert_eq!(r.per_subject.len(), 1);
        assert_eq!(r.per_subject[0].tp_rate_percent, 100.0);
        assert_eq!(r.per_subject[0].frames_evaluated, 1);
        assert!(matches!(
            aggregate(&[series("b", &[(true, 1.0); 2])], 0.4, 30),
            Err(MetricsError::NoEvaluableSubjects)
        ));
    }

    #[test]
    fn markers_csv_round_trip_and_errors() {
        let m = example_markers();
        let mut buf = Vec::new();
        write_markers_csv(&mut buf, std::slice::from_ref(&m)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("frame_id,subject_id,marker_name,u,v\n"));
        assert_eq!(read_markers_csv(text.as_bytes()).unwrap(), vec![m]);

        let missing: String = text.lines().take(9).collect::<Vec<_>>().join("\n");
        assert!(read_markers_csv(missing.as_bytes()).is_err());
        let dup = format!("{text}1,s,toe_left,3,4\n");
        assert!(read_markers_csv(dup.as_bytes()).is_err());
    }

    #[test]
    fn evaluation_against_results() {
        let m = example_markers();
        let gt = gt_bbox(&m).unwrap();
        let hit = record(true, &[gt]);
        let s = evaluate_results(&[hit], std::slice::from_ref(&m), DEFAULT_TAU).unwrap();
        assert_eq!(
            s[0].frames,
            vec![FrameOutcome {
                frame_id: 1,
                correct: true,
                iou: 1.0
            }]
        );
        let s = evaluate_results(&[], &[m], DEFAULT_TAU).unwrap();
        assert!(!s[0].frames[0].correct);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0i32..30, 0i32..30, 0i32..15, 0i32..15)
            .prop_map(|(x, y, w, h)| BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64))
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            if a.area() > 0.0 {
                prop_assert_eq!(iou(&a, &a), 1.0);
            }
        }

        #[test]
        fn gt_box_contains_markers(
            head in (50.0f64..60.0, 0.0f64..10.0),
            body in proptest::collection::vec((20.0f64..90.0, 12.0f64..100.0), 6),
            toes in proptest::collection::vec((20.0f64..90.0, 100.0f64..130.0), 2),
        ) {
            let mut pts = vec![head];
            pts.extend(body);
            pts.extend(toes);
            let m = markers(pts.try_into().unwrap());
            let b = gt_bbox(&m).unwrap();
            for (_, p) in m.iter() {
                prop_assert!(b.contains_point(p.u, p.v));
            }
        }

        #[test]
        fn tp_rate_is_order_invariant(flags in proptest::collection::vec(any::<bool>(), 1..60)) {
            let mut rev = flags.clone();
            rev.reverse();
            prop_assert_eq!(tp_rate(&flags).unwrap(), tp_rate(&rev).unwrap());
        }
    }
}
