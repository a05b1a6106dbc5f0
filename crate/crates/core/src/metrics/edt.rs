//! Exact squared Euclidean distance transform on an anisotropic grid, by
//! separable lower envelopes of parabolas (Felzenszwalb and Huttenlocher).

/// Squared distance in mm² from every voxel to the nearest seed voxel.
/// `dims` and `spacing` are (x, y, z) with x fastest in `seeds`. Voxels get
/// `f64::INFINITY` when there are no seeds at all.
pub fn squared_edt(dims: [usize; 3], spacing: [f64; 3], seeds: &[bool]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    assert_eq!(seeds.len(), nx * ny * nz, "seed mask does not match dims");
    let mut f: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let mut scratch = Envelope::with_capacity(nx.max(ny).max(nz));

    let mut line = Vec::new();
    let mut out = Vec::new();
    let mut pass = |f: &mut [f64], len: usize, step: usize, starts: &mut dyn Iterator<Item = usize>, s: f64| {
        line.resize(len, 0.0);
        out.resize(len, 0.0);
        for start in starts {
            for (i, v) in line.iter_mut().enumerate() {
                *v = f[start + i * step];
            }
            scratch.transform(&line, s, &mut out);
            for (i, v) in out.iter().enumerate() {
                f[start + i * step] = *v;
            }
        }
    };

    pass(&mut f, nx, 1, &mut (0..ny * nz).map(|r| r * nx), spacing[0]);
    pass(&mut f, ny, nx, &mut (0..nz).flat_map(|z| (0..nx).map(move |x| z * nx * ny + x)), spacing[1]);
    pass(&mut f, nz, nx * ny, &mut (0..nx * ny), spacing[2]);
    f
}

struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Envelope {
            v: Vec::with_capacity(n),
            z: Vec::with_capacity(n + 1),
        }
    }

    /// One-dimensional pass: out[p] = min_q f[q] + (s (p - q))².
    fn transform(&mut self, f: &[f64], s: f64, out: &mut [f64]) {
        let s2 = s * s;
        self.v.clear();
        self.z.clear();
        for (q, &fq) in f.iter().enumerate() {
            if !fq.is_finite() {
                continue;
            }
            let qf = q as f64;
            loop {
                let Some(&p) = self.v.last() else {
                    self.v.push(q);
                    self.z.push(f64::NEG_INFINITY);
                    break;
                };
                let pf = p as f64;
                let x = ((fq + s2 * qf * qf) - (f[p] + s2 * pf * pf)) / (2.0 * s2 * (qf - pf));
                if x <= *self.z.last().unwrap() {
                    self.v.pop();
                    self.z.pop();
                } else {
                    self.v.push(q);
                    self.z.push(x);
                    break;
                }
            }
        }
        if self.v.is_empty() {
            out.fill(f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (p, o) in out.iter_mut().enumerate() {
            let pf = p as f64;
            while k + 1 < self.v.len() && self.z[k + 1] < pf {
                k += 1;
            }
            let d = s * (pf - self.v[k] as f64);
            *o = d * d + f[self.v[k]];
        }
    }
}
