//! Two-entity volume compositing along camera rays, the derived masks and
//! the pose-stage loss terms.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::geometry::Ray;
use crate::math::{exp, sigmoid, sqrt, Rgb, Vec3};
use crate::sdf::Sdf;

/// Peak density of an SDF-derived field.
pub const DENSITY_SCALE: f64 = 1e3;
/// Width of the SDF-to-density transition, in scene units.
pub const DENSITY_WIDTH: f64 = 0.01;
pub const SCHEDULE_STEPS: f64 = 30_000.0;
pub const LAMBDA_EIKONAL1: f64 = 1.0;
pub const LAMBDA_HAND_SDF1: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Entity {
    Hand,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Hand,
    Object,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeSample {
    pub depth: f64,
    pub sigma: f64,
    pub radiance: Rgb,
}

/// Samples of one entity along a ray over `[t_near, t_far]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub entity: Entity,
    pub t_near: f64,
    pub t_far: f64,
    pub samples: Vec<VolumeSample>,
}

impl RaySamples {
    pub fn new(entity: Entity, t_near: f64, t_far: f64, samples: Vec<VolumeSample>) -> Result<Self> {
        if !(t_near <= t_far) {
            return Err(invalid("ray interval must satisfy t_near <= t_far"));
        }
        for s in &samples {
            if !(s.sigma >= 0.0) {
                return Err(invalid("sample densities must be nonnegative"));
            }
            if !(s.depth >= t_near && s.depth <= t_far) {
                return Err(invalid("sample depth outside the ray interval"));
            }
        }
        Ok(Self { entity, t_near, t_far, samples })
    }

    pub fn empty(entity: Entity, t_near: f64, t_far: f64) -> Self {
        Self { entity, t_near, t_far, samples: Vec::new() }
    }
}

/// `k·sigmoid(−d/s)`.
pub fn sdf_density(distance: f64) -> f64 {
    DENSITY_SCALE * sigmoid(-distance / DENSITY_WIDTH)
}

/// `count` evenly spaced samples (cell midpoints) of an SDF-backed field.
pub fn sample_field(
    entity: Entity,
    sdf: &dyn Sdf,
    radiance: &dyn Fn(&Vec3) -> Rgb,
    ray: &Ray,
    t_near: f64,
    t_far: f64,
    count: usize,
) -> RaySamples {
    let step = (t_far - t_near) / count.max(1) as f64;
    let samples = (0..count)
        .map(|k| {
            let t = t_near + (k as f64 + 0.5) * step;
            let p = ray.at(t);
            VolumeSample { depth: t, sigma: sdf_density(sdf.distance(&p)), radiance: radiance(&p) }
        })
        .collect();
    RaySamples { entity, t_near, t_far, samples }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskBundle {
    pub fg: f64,
    pub hand: f64,
    pub obj: f64,
    pub bg: f64,
    pub one_hot: Label,
    /// Object visible past the hand.
    pub ho: f64,
}

impl MaskBundle {
    pub fn as_triple(&self) -> [f64; 3] {
        [self.hand, self.obj, self.bg]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub color: Rgb,
    pub masks: MaskBundle,
    /// Merged samples in compositing order with their weights `τ_i`.
    pub weights: Vec<(Entity, f64)>,
}

/// Argmax with priority hand > object > background on ties.
pub fn one_hot(hand: f64, obj: f64, bg: f64) -> Label {
    if hand >= obj && hand >= bg {
        Label::Hand
    } else if obj >= bg {
        Label::Object
    } else {
        Label::Background
    }
}

fn merged(hand: &RaySamples, obj: &RaySamples) -> (Vec<(Entity, VolumeSample)>, f64) {
    let mut all: Vec<(Entity, VolumeSample)> = hand
        .samples
        .iter()
        .map(|s| (Entity::Hand, *s))
        .chain(obj.samples.iter().map(|s| (Entity::Object, *s)))
        .collect();
    // Stable: hand samples precede object samples at equal depth.
    all.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));
    (all, hand.t_far.max(obj.t_far))
}

fn weights(all: &[(Entity, VolumeSample)], t_far: f64) -> Vec<f64> {
    let mut optical = 0.0;
    let mut out = Vec::with_capacity(all.len());
    for (k, (_, s)) in all.iter().enumerate() {
        let next = all.get(k + 1).map_or(t_far, |n| n.1.depth);
        let tau = s.sigma * (next - s.depth);
        out.push(exp(-optical) * -crate::math::expm1(-tau));
        optical += tau;
    }
    out
}

/// Depth-sorted compositing of hand and object samples over a background.
pub fn composite_ray(hand: &RaySamples, obj: &RaySamples, c_bg: &Rgb) -> Composite {
    let (all, t_far) = merged(hand, obj);
    let w = weights(&all, t_far);
    let mut color = Rgb::zeros();
    let (mut m_hand, mut m_obj) = (0.0, 0.0);
    for ((e, s), &t) in all.iter().zip(&w) {
        color += s.radiance * t;
        match e {
            Entity::Hand => m_hand += t,
            Entity::Object => m_obj += t,
        }
    }
    let fg = m_hand + m_obj;
    let bg = 1.0 - fg;
    let masks = MaskBundle { fg, hand: m_hand, obj: m_obj, bg, one_hot: one_hot(m_hand, m_obj, bg), ho: m_obj };
    Composite { color: color + c_bg * bg, masks, weights: all.iter().map(|p| p.0).zip(w).collect() }
}

/// Compositing with unit object radiance and zero hand radiance.
pub fn visible_object_mask(hand: &RaySamples, obj: &RaySamples) -> f64 {
    let (all, t_far) = merged(hand, obj);
    all.iter().zip(weights(&all, t_far)).filter(|((e, _), _)| *e == Entity::Object).map(|(_, t)| t).sum()
}

#[inline]
fn sq(x: f64) -> f64 {
    x * x
}

/// Linear ramp from `from` at step 0 to `to` at [`SCHEDULE_STEPS`].
pub fn linear_schedule(step: u64, from: f64, to: f64) -> f64 {
    let s = (step as f64 / SCHEDULE_STEPS).min(1.0);
    from + (to - from) * s
}

pub fn lambda_seg1(step: u64) -> f64 {
    linear_schedule(step, 1.1, 0.1)
}

pub fn lambda_contact1(step: u64) -> f64 {
    linear_schedule(step, 0.0, 1.0)
}

/// Mean `(‖∇d‖ − 1)²` with central differences of step `h`.
pub fn eikonal_loss(sdf: &dyn Sdf, probes: &[Vec3], h: f64) -> f64 {
    if probes.is_empty() {
        return 0.0;
    }
    probes.iter().map(|p| sq(sdf.gradient(p, h).norm() - 1.0)).sum::<f64>() / probes.len() as f64
}

/// `Σ_i min_j ‖tip_i − v_j‖`.
pub fn contact_loss(tips: &[Vec3], object_vertices: &[Vec3]) -> f64 {
    if tips.is_empty() || object_vertices.is_empty() {
        log::warn!("contact loss evaluated without fingertips or object vertices");
        return 0.0;
    }
    tips.iter()
        .map(|t| object_vertices.iter().map(|v| (t - v).norm_squared()).fold(f64::INFINITY, f64::min))
        .map(sqrt)
        .sum()
}

pub struct Stage1Prediction<'a> {
    pub colors: &'a [Rgb],
    pub masks: &'a [MaskBundle],
    pub object_sdf: &'a dyn Sdf,
    pub hand_sdf: &'a dyn Sdf,
    pub fingertips: &'a [Vec3],
    pub object_vertices: &'a [Vec3],
}

pub struct Stage1Truth<'a> {
    pub colors: &'a [Rgb],
    pub labels: &'a [Label],
    /// Reference hand surface for the hand-SDF term.
    pub hand_sdf: &'a dyn Sdf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Probes<'a> {
    pub eikonal: &'a [Vec3],
    pub hand: &'a [Vec3],
    /// Scene scale; the finite-difference step is `1e-3 · scale`.
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stage1Losses {
    pub rgb: f64,
    pub seg: f64,
    pub eikonal: f64,
    pub hand_sdf: f64,
    pub contact: f64,
    pub lambda_seg: f64,
    pub lambda_contact: f64,
    pub total: f64,
}

fn label_vector(l: Label) -> [f64; 3] {
    match l {
        Label::Hand => [1.0, 0.0, 0.0],
        Label::Object => [0.0, 1.0, 0.0],
        Label::Background => [0.0, 0.0, 1.0],
    }
}

pub fn stage1_losses(pred: &Stage1Prediction, truth: &Stage1Truth, probes: &Stage1Probes, step: u64) -> Result<Stage1Losses> {
    if pred.colors.len() != truth.colors.len() || pred.masks.len() != truth.labels.len() {
        return Err(invalid("prediction and ground truth ray counts differ"));
    }
    let rgb: f64 = pred.colors.iter().zip(truth.colors).map(|(a, b)| (a - b).norm()).sum();
    let seg: f64 = pred
        .masks
        .iter()
        .zip(truth.labels)
        .map(|(m, &l)| {
            let (p, t) = (m.as_triple(), label_vector(l));
            sqrt((0..3).map(|k| sq(p[k] - t[k])).sum())
        })
        .sum();
    let eikonal = eikonal_loss(pred.object_sdf, probes.eikonal, 1e-3 * probes.scale);
    let hand_sdf = if probes.hand.is_empty() {
        0.0
    } else {
        probes.hand.iter().map(|p| sq(pred.hand_sdf.distance(p) - truth.hand_sdf.distance(p))).sum::<f64>()
            / probes.hand.len() as f64
    };
    let contact = contact_loss(pred.fingertips, pred.object_vertices);
    let (ls, lc) = (lambda_seg1(step), lambda_contact1(step));
    let total = rgb + ls * seg + LAMBDA_EIKONAL1 * eikonal + LAMBDA_HAND_SDF1 * hand_sdf + lc * contact;
    Ok(Stage1Losses { rgb, seg, eikonal, hand_sdf, contact, lambda_seg: ls, lambda_contact: lc, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{rgb, splat};
    use core::f64::consts::LN_2;
    use crate::sdf::SphereSdf;
    use proptest::prelude::*;

    fn one(entity: Entity, depth: f64, sigma: f64, c: Rgb, t_far: f64) -> RaySamples {
        RaySamples::new(entity, 0.0, t_far, alloc::vec![VolumeSample { depth, sigma, radiance: c }]).unwrap()
    }

    #[test]
    fn empty_medium_shows_background() {
        let bg = rgb(0.1, 0.2, 0.3);
        let h = RaySamples::new(Entity::Hand, 0.0, 1.0, alloc::vec![VolumeSample { depth: 0.5, sigma: 0.0, radiance: splat(1.0) }]).unwrap();
        let c = composite_ray(&h, &RaySamples::empty(Entity::Object, 0.0, 1.0), &bg);
        assert_eq!(c.color, bg);
        assert_eq!(c.masks.fg, 0.0);
        assert_eq!(c.masks.one_hot, Label::Background);
    }

    #[test]
    fn opaque_object_sample() {
        // δ = 1, σ = 10³
        let o = one(Entity::Object, 1.0, 1e3, rgb(0.2, 0.4, 0.6), 2.0);
        let c = composite_ray(&RaySamples::empty(Entity::Hand, 0.0, 2.0), &o, &splat(1.0));
        assert!((c.masks.fg - 1.0).abs() < 1e-6);
        assert!((c.color - rgb(0.2, 0.4, 0.6)).norm() < 1e-6);
        assert!((visible_object_mask(&RaySamples::empty(Entity::Hand, 0.0, 2.0), &o) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hand_in_front_hides_object() {
        let h = one(Entity::Hand, 1.0, 1e3, splat(0.5), 3.0);
        let o = one(Entity::Object, 2.0, 1e3, splat(0.9), 3.0);
        let c = composite_ray(&h, &o, &Rgb::zeros());
        assert_eq!(c.masks.one_hot, Label::Hand);
        assert!(c.masks.ho < 1e-6);
        assert!(visible_object_mask(&h, &o) < 1e-6);
    }

    #[test]
    fn half_transparent_hand_halves_visibility() {
        // Hand sample at depth 1 with δ = 1 and σ = ln 2.
        let h = one(Entity::Hand, 1.0, LN_2, splat(0.5), 3.0);
        let o = one(Entity::Object, 2.0, 1e3, splat(0.9), 3.0);
        assert!((visible_object_mask(&h, &o) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn ties_put_hand_first() {
        let h = one(Entity::Hand, 1.0, 1e3, splat(0.5), 2.0);
        let o = one(Entity::Object, 1.0, 1e3, splat(0.9), 2.0);
        let c = composite_ray(&h, &o, &Rgb::zeros());
        assert_eq!(c.weights[0].0, Entity::Hand);
        assert_eq!(one_hot(0.4, 0.4, 0.2), Label::Hand);
        assert_eq!(one_hot(0.2, 0.4, 0.4), Label::Object);
    }

    #[test]
    fn rejects_bad_samples() {
        let s = |sigma, depth| alloc::vec![VolumeSample { depth, sigma, radiance: splat(0.0) }];
        assert!(RaySamples::new(Entity::Hand, 0.0, 1.0, s(-1.0, 0.5)).is_err());
        assert!(RaySamples::new(Entity::Hand, 0.0, 1.0, s(1.0, 2.0)).is_err());
    }

    #[test]
    fn schedules() {
        assert_eq!(lambda_seg1(0), 1.1);
        assert!((lambda_seg1(30_000) - 0.1).abs() < 1e-15);
        assert!((lambda_seg1(90_000) - 0.1).abs() < 1e-15);
        assert!((lambda_seg1(15_000) - 0.6).abs() < 1e-12);
        assert_eq!(lambda_contact1(0), 0.0);
        assert_eq!(lambda_contact1(30_000), 1.0);
        assert_eq!(lambda_contact1(40_000), 1.0);
    }

    #[test]
    fn exact_sphere_sdf_has_unit_gradient() {
        let s = SphereSdf { center: Vec3::zeros(), radius: 1.0 };
        let probes: Vec<Vec3> = crate::math::fibonacci_sphere(1000).into_iter().enumerate().map(|(k, d)| d * (0.2 + 2.0 * (k as f64 / 1000.0))).collect();
        assert!(eikonal_loss(&s, &probes, 1e-3) <= 1e-4);
    }

    #[test]
    fn perfect_prediction_has_zero_data_losses() {
        let s = SphereSdf { center: Vec3::zeros(), radius: 1.0 };
        let colors = [rgb(0.1, 0.2, 0.3), rgb(0.5, 0.5, 0.5)];
        let masks = [
            MaskBundle { fg: 1.0, hand: 1.0, obj: 0.0, bg: 0.0, one_hot: Label::Hand, ho: 0.0 },
            MaskBundle { fg: 0.0, hand: 0.0, obj: 0.0, bg: 1.0, one_hot: Label::Background, ho: 0.0 },
        ];
        let labels = [Label::Hand, Label::Background];
        let tips = [Vec3::new(1.0, 0.0, 0.0)];
        let verts = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)];
        let pred = Stage1Prediction { colors: &colors, masks: &masks, object_sdf: &s, hand_sdf: &s, fingertips: &tips, object_vertices: &verts };
        let truth = Stage1Truth { colors: &colors, labels: &labels, hand_sdf: &s };
        let probes = Stage1Probes { eikonal: &[Vec3::new(0.3, 0.2, 0.1)], hand: &[Vec3::new(0.5, 0.5, 0.5)], scale: 1.0 };
        let l = stage1_losses(&pred, &truth, &probes, 0).unwrap();
        assert_eq!((l.rgb, l.seg, l.hand_sdf, l.contact), (0.0, 0.0, 0.0, 0.0));
        assert!(l.eikonal < 1e-6);
        assert!(stage1_losses(&pred, &Stage1Truth { colors: &colors[..1], ..truth }, &probes, 0).is_err());
    }

    #[test]
    fn contact_without_tips_is_zero() {
        assert_eq!(contact_loss(&[], &[Vec3::zeros()]), 0.0);
        assert!((contact_loss(&[Vec3::new(3.0, 4.0, 0.0)], &[Vec3::zeros()]) - 5.0).abs() < 1e-15);
    }

    fn arb_samples(entity: Entity) -> impl Strategy<Value = RaySamples> {
        prop::collection::vec((0.0f64..4.0, 0.0f64..20.0, 0.0f64..1.0), 0..12).prop_map(move |v| RaySamples {
            entity,
            t_near: 0.0,
            t_far: 4.0,
            samples: v.into_iter().map(|(d, s, c)| VolumeSample { depth: d, sigma: s, radiance: splat(c) }).collect(),
        })
    }

    proptest! {
        #[test]
        fn mask_identities(h in arb_samples(Entity::Hand), o in arb_samples(Entity::Object)) {
            let c = composite_ray(&h, &o, &Rgb::zeros());
            let m = c.masks;
            prop_assert!((m.bg - (1.0 - m.fg)).abs() == 0.0);
            prop_assert!(m.fg >= -1e-12 && m.fg <= 1.0 + 1e-12);
            let sum: f64 = c.weights.iter().map(|w| w.1).sum();
            prop_assert!((sum - (m.hand + m.obj)).abs() < 1e-12);
            // Telescoping: Σ τ_i = 1 − exp(−Σ σ_i δ_i).
            let (all, t_far) = merged(&h, &o);
            let optical: f64 = all.iter().enumerate().map(|(k, s)| s.1.sigma * (all.get(k + 1).map_or(t_far, |n| n.1.depth) - s.1.depth)).sum();
            prop_assert!((sum - (1.0 - exp(-optical))).abs() < 1e-9);
            prop_assert!((visible_object_mask(&h, &o) - m.obj).abs() < 1e-12);
        }

        #[test]
        fn presorting_does_not_matter(h in arb_samples(Entity::Hand), o in arb_samples(Entity::Object)) {
            let mut hs = h.clone();
            hs.samples.reverse();
            let mut os = o.clone();
            os.samples.sort_by(|a, b| a.depth.total_cmp(&b.depth));
            let a = composite_ray(&h, &o, &splat(0.3));
            let b = composite_ray(&hs, &os, &splat(0.3));
            prop_assert!((a.color - b.color).norm() < 1e-12);
            prop_assert!((a.masks.fg - b.masks.fg).abs() < 1e-12);
        }

        #[test]
        fn denser_media_never_lower_coverage(h in arb_samples(Entity::Hand), o in arb_samples(Entity::Object), extra in (0.0f64..4.0, 0.0f64..5.0), pick in 0usize..12) {
            let before = composite_ray(&h, &o, &Rgb::zeros()).masks.fg;
            // A sample at least as dense as every other one.
            let top = h.samples.iter().chain(&o.samples).map(|s| s.sigma).fold(0.0, f64::max);
            let mut o2 = o.clone();
            o2.samples.push(VolumeSample { depth: extra.0, sigma: top + extra.1, radiance: splat(0.5) });
            prop_assert!(composite_ray(&h, &o2, &Rgb::zeros()).masks.fg >= before - 1e-12);
            let mut h2 = h.clone();
            if !h2.samples.is_empty() {
                let k = pick % h2.samples.len();
                h2.samples[k].sigma += extra.1;
                prop_assert!(composite_ray(&h2, &o, &Rgb::zeros()).masks.fg >= before - 1e-12);
            }
        }
    }
}
