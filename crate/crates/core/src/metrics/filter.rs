use crate::raster::Plane;

/// Normalized 1-D Gaussian; the outer product of two of these equals the
/// normalized 2-D Gaussian window.
pub(crate) fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable correlation keeping only fully-overlapping positions. Returns
/// `None` when the kernel does not fit.
pub(crate) fn filter_valid(p: &Plane, kernel: &[f64]) -> Option<Plane> {
    let n = kernel.len();
    if p.width < n || p.height < n {
        return None;
    }
    let ow = p.width - n + 1;
    let oh = p.height - n + 1;
    let mut tmp = vec![0.0; ow * p.height];
    for y in 0..p.height {
        let row = &p.data[y * p.width..(y + 1) * p.width];
        for x in 0..ow {
            tmp[y * ow + x] = kernel.iter().zip(&row[x..x + n]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    Some(Plane::new(ow, oh, out))
}

pub(crate) fn product(a: &Plane, b: &Plane) -> Plane {
    Plane::new(
        a.width,
        a.height,
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    )
}

/// Keeps every second sample in both directions, starting at the origin.
pub(crate) fn decimate(p: &Plane) -> Plane {
    let w = p.width.div_ceil(2);
    let h = p.height.div_ceil(2);
    let mut data = Vec::with_capacity(w * h);
    for y in (0..p.height).step_by(2) {
        for x in (0..p.width).step_by(2) {
            data.push(p.at(x, y));
        }
    }
    Plane::new(w, h, data)
}

/// Local first and second moments under one window.
pub(crate) struct Moments {
    pub mu1: Plane,
    pub mu2: Plane,
    pub var1: Vec<f64>,
    pub var2: Vec<f64>,
    pub cov: Vec<f64>,
}

pub(crate) fn local_moments(a: &Plane, b: &Plane, kernel: &[f64]) -> Option<Moments> {
    let mu1 = filter_valid(a, kernel)?;
    let mu2 = filter_valid(b, kernel)?;
    let e11 = filter_valid(&product(a, a), kernel)?;
    let e22 = filter_valid(&product(b, b), kernel)?;
    let e12 = filter_valid(&product(a, b), kernel)?;
    let n = mu1.data.len();
    let mut var1 = Vec::with_capacity(n);
    let mut var2 = Vec::with_capacity(n);
    let mut cov = Vec::with_capacity(n);
    for i in 0..n {
        let (m1, m2) = (mu1.data[i], mu2.data[i]);
        var1.push(e11.data[i] - m1 * m1);
        var2.push(e22.data[i] - m2 * m2);
        cov.push(e12.data[i] - m1 * m2);
    }
    Some(Moments {
        mu1,
        mu2,
        var1,
        var2,
        cov,
    })
}
