//! Single-object tracking metrics: average overlap, success rates, the
//! success-plot AUC, and center-error precision.

use crate::codec::BBox;

/// Intersection over union of two axis-aligned boxes; 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f32 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let ix = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let iy = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// One-pass evaluation summary. The first frame (initialization) is excluded
/// from every statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// Mean IoU.
    pub ao: f64,
    /// Fraction of frames with IoU > 0.5.
    pub sr50: f64,
    /// Fraction of frames with IoU > 0.75.
    pub sr75: f64,
    /// Mean success rate over thresholds 0.0, 0.05, ..., 1.0.
    pub success_auc: f64,
    /// Fraction of frames with center error < 20 px.
    pub precision20: f64,
    pub per_frame_iou: Vec<f32>,
}

impl MetricReport {
    pub fn render(&self) -> String {
        format!(
            "AO {:.4}  SR0.50 {:.4}  SR0.75 {:.4}  AUC {:.4}  P20 {:.4}",
            self.ao, self.sr50, self.sr75, self.success_auc, self.precision20
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LengthMismatch {
    pub trajectory: usize,
    pub ground_truth: usize,
}

impl std::fmt::Display for LengthMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "trajectory has {} frames but ground truth has {}",
            self.trajectory, self.ground_truth
        )
    }
}

impl std::error::Error for LengthMismatch {}

pub const PRECISION_RADIUS_PX: f64 = 20.0;

/// Success thresholds 0.0, 0.05, ..., 1.0.
pub fn success_thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.05).collect()
}

/// Score a predicted trajectory against ground truth (frame coordinates).
pub fn evaluate(trajectory: &[BBox], gts: &[BBox]) -> Result<MetricReport, LengthMismatch> {
    if trajectory.len() != gts.len() {
        return Err(LengthMismatch {
            trajectory: trajectory.len(),
            ground_truth: gts.len(),
        });
    }
    assert!(trajectory.len() >= 2, "need at least two frames to evaluate");
    let pairs = trajectory.iter().zip(gts).skip(1);

    let mut per_frame_iou = Vec::with_capacity(trajectory.len() - 1);
    let mut center_errors = Vec::with_capacity(trajectory.len() - 1);
    for (p, g) in pairs {
        per_frame_iou.push(iou(p, g));
        let dx = (p.cx - g.cx) as f64;
        let dy = (p.cy - g.cy) as f64;
        center_errors.push((dx * dx + dy * dy).sqrt());
    }
    let n = per_frame_iou.len() as f64;

    let mut sum = 0.0f64;
    for &v in &per_frame_iou {
        sum += v as f64;
    }
    let ao = sum / n;
    let rate = |thr: f64| -> f64 {
        let mut hit = 0usize;
        for &v in &per_frame_iou {
            if (v as f64) > thr {
                hit += 1;
            }
        }
        hit as f64 / n
    };
    let sr50 = rate(0.5);
    let sr75 = rate(0.75);
    let thresholds = success_thresholds();
    let mut auc = 0.0f64;
    for &t in &thresholds {
        auc += rate(t);
    }
    let success_auc = auc / thresholds.len() as f64;
    let mut prec_hits = 0usize;
    for &e in &center_errors {
        if e < PRECISION_RADIUS_PX {
            prec_hits += 1;
        }
    }
    let precision20 = prec_hits as f64 / n;

    Ok(MetricReport {
        ao,
        sr50,
        sr75,
        success_auc,
        precision20,
        per_frame_iou,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_identical_and_disjoint() {
        let a = BBox::new(10.0, 10.0, 4.0, 4.0);
        assert_eq!(iou(&a, &a), 1.0);
        let b = BBox::new(100.0, 100.0, 4.0, 4.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_known_overlap() {
        // corner boxes (0,0,2,2) and (1,1,3,3): intersection 1, union 7
        let a = BBox::from_corners(0.0, 0.0, 2.0, 2.0);
        let b = BBox::from_corners(1.0, 1.0, 3.0, 3.0);
        let v = iou(&a, &b);
        assert!((v - 1.0 / 7.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn perfect_trajectory_scores_ones() {
        let gts: Vec<BBox> = (0..5)
            .map(|i| BBox::new(10.0 + i as f32, 20.0, 6.0, 6.0))
            .collect();
        let r = evaluate(&gts, &gts).unwrap();
        assert_eq!(r.ao, 1.0);
        assert_eq!(r.sr50, 1.0);
        assert_eq!(r.sr75, 1.0);
        assert_eq!(r.precision20, 1.0);
    }

    #[test]
    fn mixed_ious_match_hand_arithmetic() {
        // construct predictions with IoU exactly 1.0, 0.6, 0.4 vs gt
        // For two boxes sharing a corner with same height h and widths w1<w2:
        // IoU = w1/w2. Use widths to hit 0.6 and 0.4.
        let gt = BBox::from_corners(0.0, 0.0, 10.0, 10.0);
        let p6 = BBox::from_corners(0.0, 0.0, 6.0, 10.0);
        let p4 = BBox::from_corners(0.0, 0.0, 4.0, 10.0);
        assert!((iou(&p6, &gt) - 0.6).abs() < 1e-6);
        assert!((iou(&p4, &gt) - 0.4).abs() < 1e-6);
        let traj = vec![gt, gt, p6, p4];
        let gts = vec![gt, gt, gt, gt];
        let r = evaluate(&traj, &gts).unwrap();
        assert!((r.ao - (1.0 + 0.6 + 0.4) / 3.0).abs() < 1e-6, "AO {}", r.ao);
        assert!((r.sr50 - 2.0 / 3.0).abs() < 1e-9);
        assert!((r.sr75 - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn sr_monotone_in_threshold() {
        let gt = BBox::from_corners(0.0, 0.0, 10.0, 10.0);
        let traj: Vec<BBox> = (0..20)
            .map(|i| BBox::from_corners(0.0, 0.0, 1.0 + 0.45 * i as f32, 10.0))
            .collect();
        let gts = vec![gt; 20];
        let r = evaluate(&traj, &gts).unwrap();
        let mut prev = 1.0f64;
        for t in success_thresholds() {
            let rate = r
                .per_frame_iou
                .iter()
                .filter(|&&v| (v as f64) > t)
                .count() as f64
                / r.per_frame_iou.len() as f64;
            assert!(rate <= prev + 1e-12);
            prev = rate;
        }
        assert!(r.sr75 <= r.sr50);
    }

    #[test]
    fn translation_invariance() {
        let gts: Vec<BBox> = (0..6)
            .map(|i| BBox::new(30.0 + 2.0 * i as f32, 40.0, 8.0, 10.0))
            .collect();
        let traj: Vec<BBox> = gts
            .iter()
            .map(|b| BBox::new(b.cx + 1.0, b.cy - 2.0, b.w, b.h))
            .collect();
        let r1 = evaluate(&traj, &gts).unwrap();
        let shift = |b: &BBox| BBox::new(b.cx + 17.0, b.cy + 5.0, b.w, b.h);
        let traj2: Vec<BBox> = traj.iter().map(shift).collect();
        let gts2: Vec<BBox> = gts.iter().map(shift).collect();
        let r2 = evaluate(&traj2, &gts2).unwrap();
        assert_eq!(r1.ao, r2.ao);
        assert_eq!(r1.sr50, r2.sr50);
        assert_eq!(r1.success_auc, r2.success_auc);
    }

    #[test]
    fn length_mismatch_rejected() {
        let gt = BBox::new(1.0, 1.0, 2.0, 2.0);
        let err = evaluate(&[gt, gt], &[gt]).unwrap_err();
        assert_eq!(err.trajectory, 2);
        assert_eq!(err.ground_truth, 1);
    }
}
