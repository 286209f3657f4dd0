//! Seeded simulation of user prompts.
//!
//! Every random stream is a ChaCha8 generator seeded from
//! [`derive_stream_seed`], so a plan depends only on the master seed, the case
//! and the class, never on scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{binary_mask_of, middle_index, tight_box, BoxPrompt, LabelMap, Mask2D, PointPrompt, PromptSet};

/// Name recorded in result files so runs can be replayed elsewhere.
pub const RNG_ALGORITHM: &str = "chacha8(seed=splitmix64(fnv1a64(master_seed_le|case_id|class_id_le)))";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-(case, class) stream seed.
pub fn derive_stream_seed(master_seed: u64, case_id: &str, class_id: u32) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master_seed.to_le_bytes());
    h = fnv1a(h, case_id.as_bytes());
    h = fnv1a(h, &class_id.to_le_bytes());
    splitmix64(h)
}

pub fn stream_rng(master_seed: u64, case_id: &str, class_id: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_stream_seed(master_seed, case_id, class_id))
}

/// One foreground pixel drawn uniformly from the mask.
pub fn sample_point<R: Rng + ?Sized>(mask: &Mask2D, rng: &mut R) -> Result<PointPrompt> {
    let candidates = mask.foreground();
    if candidates.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (row, col) = candidates[rng.random_range(0..candidates.len())];
    Ok(PointPrompt::foreground(row, col))
}

/// `min(k, |P|)` distinct foreground pixels, drawn without replacement.
///
/// Uses a partial Fisher-Yates shuffle, so the first click has exactly the
/// [`sample_point`] distribution and a k-click draw extends the (k-1)-click
/// draw made from the same stream.
pub fn sample_k_clicks<R: Rng + ?Sized>(mask: &Mask2D, k: usize, rng: &mut R) -> Result<Vec<PointPrompt>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut candidates = mask.foreground();
    if candidates.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = candidates.len();
    let m = k.min(n);
    for i in 0..m {
        let j = rng.random_range(i..n);
        candidates.swap(i, j);
    }
    Ok(candidates[..m]
        .iter()
        .map(|&(r, c)| PointPrompt::foreground(r, c))
        .collect())
}

/// Box around the class on the middle slice, or on the nearest slice that
/// contains it (the lower index wins ties).
pub fn box_prompt_for_volume(gt_volume: &[LabelMap], class_id: u32) -> Result<(usize, BoxPrompt)> {
    let slice = anchor_slice(gt_volume, class_id)?;
    let mask = binary_mask_of(&gt_volume[slice], class_id)?;
    Ok((slice, tight_box(&mask)?))
}

/// Slice used to anchor a volume: the middle slice when it holds the class,
/// otherwise the nearest one that does.
pub fn anchor_slice(gt_volume: &[LabelMap], class_id: u32) -> Result<usize> {
    let depth = gt_volume.len();
    let mid = middle_index(depth)?;
    for offset in 0..depth {
        let below = mid.checked_sub(offset);
        let above = Some(mid + offset).filter(|&s| s < depth && offset > 0);
        for s in [below, above].into_iter().flatten() {
            if gt_volume[s].contains(class_id) {
                return Ok(s);
            }
        }
        if below.is_none() && mid + offset >= depth {
            break;
        }
    }
    Err(Error::ClassAbsent)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptStrategy {
    PointK { k: usize },
    BoxMiddle,
    VideoNFramesKClicks { n: usize, k: usize },
    GtMask,
}

/// The prompts a simulated user gives for one object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub strategy: PromptStrategy,
    pub seed: u64,
    pub prompts: Vec<PromptSet>,
}

/// `k` clicks on each of the first `n` frames that contain the class.
pub fn video_interaction_plan(
    gt: &[LabelMap],
    class_id: u32,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<PromptPlan> {
    if n == 0 || k == 0 {
        return Err(Error::InvalidArgument("n and k must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prompts = Vec::new();
    for (i, labels) in gt.iter().take(n).enumerate() {
        let mask = binary_mask_of(labels, class_id)?;
        if mask.is_empty() {
            continue;
        }
        prompts.push(PromptSet::points(i, sample_k_clicks(&mask, k, &mut rng)?));
    }
    if prompts.is_empty() {
        return Err(Error::NoPromptableFrame);
    }
    Ok(PromptPlan {
        strategy: PromptStrategy::VideoNFramesKClicks { n, k },
        seed,
        prompts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(h: usize, w: usize, r0: usize, c0: usize, side: usize) -> Mask2D {
        Mask2D::from_fn(h, w, |r, c| (r0..r0 + side).contains(&r) && (c0..c0 + side).contains(&c))
    }

    #[test]
    fn single_pixel_mask_always_returns_it() {
        let m = square(5, 5, 2, 3, 1);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(sample_point(&m, &mut rng).unwrap(), PointPrompt::foreground(2, 3));
        }
    }

    #[test]
    fn sample_point_is_uniform() {
        let m = square(4, 4, 1, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = std::collections::HashMap::new();
        let draws = 100_000;
        for _ in 0..draws {
            let p = sample_point(&m, &mut rng).unwrap();
            *counts.entry((p.row, p.col)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 4);
        for (_, c) in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() <= 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn empty_mask_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = Mask2D::empty(3, 3);
        assert!(matches!(sample_point(&e, &mut rng), Err(Error::EmptyMask)));
        assert!(matches!(sample_k_clicks(&e, 2, &mut rng), Err(Error::EmptyMask)));
    }

    #[test]
    fn k_clicks_clamp_to_mask_size() {
        let m = Mask2D::from_fn(3, 3, |r, c| r == c);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts: Vec<_> = sample_k_clicks(&m, 5, &mut rng).unwrap().iter().map(|p| (p.row, p.col)).collect();
        pts.sort();
        assert_eq!(pts, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn one_click_matches_sample_point_distribution() {
        let m = square(6, 6, 1, 1, 3);
        let draws = 20_000;
        let mut a = std::collections::BTreeMap::new();
        let mut b = std::collections::BTreeMap::new();
        let mut ra = ChaCha8Rng::seed_from_u64(1);
        let mut rb = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..draws {
            let p = sample_point(&m, &mut ra).unwrap();
            *a.entry((p.row, p.col)).or_insert(0usize) += 1;
            let q = sample_k_clicks(&m, 1, &mut rb).unwrap()[0];
            *b.entry((q.row, q.col)).or_insert(0usize) += 1;
        }
        assert_eq!(a.len(), 9);
        for (key, ca) in &a {
            let cb = b.get(key).copied().unwrap_or(0);
            let diff = (*ca as f64 - cb as f64).abs() / draws as f64;
            assert!(diff < 0.02, "{key:?}: {ca} vs {cb}");
        }
    }

    #[test]
    fn k_clicks_extend_prefix() {
        let m = square(10, 10, 2, 2, 5);
        let one = sample_k_clicks(&m, 1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let five = sample_k_clicks(&m, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(one[0], five[0]);
    }

    fn volume_with(present: &[usize], depth: usize) -> Vec<LabelMap> {
        (0..depth)
            .map(|z| {
                let on = present.contains(&z);
                let labels = (0..16).map(|i| if on && (i == 5 || i == 6) { 1 } else { 0 }).collect();
                LabelMap::new(4, 4, labels, 1).unwrap()
            })
            .collect()
    }

    #[test]
    fn box_on_middle_slice() {
        let vol = volume_with(&[0, 1, 2, 3, 4, 5, 6], 7);
        let (s, b) = box_prompt_for_volume(&vol, 1).unwrap();
        assert_eq!(s, 3);
        assert_eq!(b, BoxPrompt { row_min: 1, col_min: 1, row_max: 1, col_max: 2 });
    }

    #[test]
    fn box_falls_back_to_nearest_slice() {
        let vol = volume_with(&[0, 1], 7);
        assert_eq!(box_prompt_for_volume(&vol, 1).unwrap().0, 1);
        // equidistant: 2 and 4 around middle 3 -> lower index
        let vol = volume_with(&[2, 4], 7);
        assert_eq!(box_prompt_for_volume(&vol, 1).unwrap().0, 2);
        let vol = volume_with(&[6], 7);
        assert_eq!(box_prompt_for_volume(&vol, 1).unwrap().0, 6);
        let vol = volume_with(&[], 7);
        assert!(matches!(box_prompt_for_volume(&vol, 1), Err(Error::ClassAbsent)));
    }

    /// Independent scan: the present slice minimizing (|s - mid|, s).
    fn nearest_oracle(present: &[usize], depth: usize) -> Option<usize> {
        let mid = depth / 2;
        present.iter().copied().min_by_key(|&s| ((s as i64 - mid as i64).abs(), s))
    }

    proptest! {
        #[test]
        fn anchor_matches_scan_oracle(depth in 1usize..12, mask in 0u32..4096) {
            let present: Vec<usize> = (0..depth).filter(|z| mask & (1 << z) != 0).collect();
            let vol = volume_with(&present, depth);
            let got = anchor_slice(&vol, 1).ok();
            prop_assert_eq!(got, nearest_oracle(&present, depth));
        }

        #[test]
        fn sampled_points_are_foreground(h in 1usize..12, w in 1usize..12, bits in proptest::collection::vec(any::<bool>(), 144), k in 1usize..8, seed in any::<u64>()) {
            let m = Mask2D::new(h, w, bits[..h * w].to_vec()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match sample_k_clicks(&m, k, &mut rng) {
                Ok(points) => {
                    prop_assert_eq!(points.len(), k.min(m.foreground_count()));
                    let mut seen = std::collections::HashSet::new();
                    for p in points {
                        prop_assert!(m.get(p.row, p.col));
                        prop_assert!(seen.insert((p.row, p.col)));
                    }
                }
                Err(_) => prop_assert!(m.is_empty()),
            }
        }
    }

    fn video(frames: usize, present: &[usize]) -> Vec<LabelMap> {
        volume_with(present, frames)
    }

    #[test]
    fn video_plan_examples() {
        let gt = video(5, &[0, 1, 2, 3, 4]);
        let plan = video_interaction_plan(&gt, 1, 1, 3, 7).unwrap();
        assert_eq!(plan.prompts.len(), 1);
        assert_eq!(plan.prompts[0].frame_index, 0);
        assert_eq!(plan.prompts[0].points.len(), 2); // only two pixels in the mask
        let plan = video_interaction_plan(&gt, 1, 8, 1, 7).unwrap();
        assert_eq!(plan.prompts.len(), 5);
        assert_eq!(plan, video_interaction_plan(&gt, 1, 8, 1, 7).unwrap());
        let gt = video(5, &[3]);
        assert!(matches!(video_interaction_plan(&gt, 1, 2, 1, 7), Err(Error::NoPromptableFrame)));
        let plan = video_interaction_plan(&gt, 1, 4, 1, 7).unwrap();
        assert_eq!(plan.prompts.iter().map(|p| p.frame_index).collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn stream_seeds_are_stable_and_distinct() {
        let a = derive_stream_seed(7, "case_000", 1);
        assert_eq!(a, derive_stream_seed(7, "case_000", 1));
        assert_ne!(a, derive_stream_seed(7, "case_000", 2));
        assert_ne!(a, derive_stream_seed(8, "case_000", 1));
        assert_ne!(a, derive_stream_seed(7, "case_001", 1));
    }
}
