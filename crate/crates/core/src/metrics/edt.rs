//! Exact squared Euclidean distance transform (Felzenszwalb & Huttenlocher),
//! separable over the axes of a `depth x height x width` grid.

/// Stand-in for "no feature reachable". Large enough to dominate every real
/// squared distance on any grid we handle, small enough to keep arithmetic finite.
const FAR: f64 = 1e20;

/// Squared distance from every cell to the nearest `true` cell of `features`.
/// Cells are unit spaced. If `features` is empty every entry is `f64::INFINITY`.
pub fn squared_distance_transform(dims: [usize; 3], features: &[bool]) -> Vec<f64> {
    let [depth, height, width] = dims;
    assert_eq!(features.len(), depth * height * width);
    if !features.iter().any(|&f| f) {
        return vec![f64::INFINITY; features.len()];
    }
    let mut dist: Vec<f64> = features.iter().map(|&f| if f { 0.0 } else { FAR }).collect();

    let n = depth.max(height).max(width);
    let mut scratch = Scratch::new(n);

    // Along columns (x).
    for z in 0..depth {
        for y in 0..height {
            let base = (z * height + y) * width;
            scratch.run(&mut dist, base, 1, width);
        }
    }
    // Along rows (y).
    for z in 0..depth {
        for x in 0..width {
            let base = z * height * width + x;
            scratch.run(&mut dist, base, width, height);
        }
    }
    // Along slices (z).
    if depth > 1 {
        for y in 0..height {
            for x in 0..width {
                let base = y * width + x;
                scratch.run(&mut dist, base, height * width, depth);
            }
        }
    }
    dist
}

struct Scratch {
    f: Vec<f64>,
    d: Vec<f64>,
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            f: vec![0.0; n],
            d: vec![0.0; n],
            v: vec![0; n],
            z: vec![0.0; n + 1],
        }
    }

    fn run(&mut self, data: &mut [f64], base: usize, stride: usize, len: usize) {
        for i in 0..len {
            self.f[i] = data[base + i * stride];
        }
        lower_envelope(&self.f[..len], &mut self.d[..len], &mut self.v, &mut self.z);
        for i in 0..len {
            data[base + i * stride] = self.d[i];
        }
    }
}

/// 1-D squared distance transform of the sampled function `f`.
fn lower_envelope(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        loop {
            let p = v[k];
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0: the new parabola dominates everywhere.
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(dims: [usize; 3], features: &[bool]) -> Vec<f64> {
        let [dd, h, w] = dims;
        let pts: Vec<(i64, i64, i64)> = (0..features.len())
            .filter(|&i| features[i])
            .map(|i| ((i / (h * w)) as i64, ((i / w) % h) as i64, (i % w) as i64))
            .collect();
        (0..dd * h * w)
            .map(|i| {
                let (z, y, x) = ((i / (h * w)) as i64, ((i / w) % h) as i64, (i % w) as i64);
                pts.iter()
                    .map(|&(a, b, c)| ((z - a).pow(2) + (y - b).pow(2) + (x - c).pow(2)) as f64)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_on_small_grids() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..200 {
            let dims = [
                1 + (next() % 4) as usize,
                1 + (next() % 9) as usize,
                1 + (next() % 9) as usize,
            ];
            let n = dims.iter().product();
            let features: Vec<bool> = (0..n).map(|_| next() % 7 == 0).collect();
            let fast = squared_distance_transform(dims, &features);
            let slow = brute(dims, &features);
            assert_eq!(fast, slow, "dims {dims:?}");
        }
    }

    #[test]
    fn single_feature_in_row() {
        let f = [false, false, true, false];
        assert_eq!(squared_distance_transform([1, 1, 4], &f), vec![4.0, 1.0, 0.0, 1.0]);
    }
}
