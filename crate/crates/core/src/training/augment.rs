//! Flips and 90-degree rotations of cubic patches, as signed axis permutations.

use rand::Rng;

/// Maps input voxel `x` to output voxel `y` with
/// `y[i] = flip[i] ? s - 1 - x[perm[i]] : x[perm[i]]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Transform {
    pub perm: [usize; 3],
    pub flip: [bool; 3],
}

impl Default for Transform {
    fn default() -> Self {
        Transform::IDENTITY
    }
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        perm: [0, 1, 2],
        flip: [false; 3],
    };

    pub fn flip_axis(axis: usize) -> Transform {
        let mut flip = [false; 3];
        flip[axis] = true;
        Transform { perm: [0, 1, 2], flip }
    }

    /// Quarter turn in the plane of the two axes other than `axis`.
    pub fn rot90(axis: usize) -> Transform {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut perm = [0, 1, 2];
        let mut flip = [false; 3];
        perm[a] = b;
        perm[b] = a;
        flip[b] = true;
        Transform { perm, flip }
    }

    /// Determinant of the signed permutation matrix.
    pub fn det(&self) -> i32 {
        let p = self.perm;
        let inversions = (p[0] > p[1]) as i32 + (p[0] > p[2]) as i32 + (p[1] > p[2]) as i32;
        let sign = if inversions % 2 == 0 { 1 } else { -1 };
        self.flip.iter().fold(sign, |s, &f| if f { -s } else { s })
    }

    /// All 48 signed permutations of the three axes.
    pub fn all() -> Vec<Transform> {
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut out = Vec::with_capacity(48);
        for perm in PERMS {
            for bits in 0..8u8 {
                let flip = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0];
                out.push(Transform { perm, flip });
            }
        }
        out
    }

    /// The 24 proper rotations of the cube.
    pub fn rotations() -> Vec<Transform> {
        Transform::all().into_iter().filter(|t| t.det() == 1).collect()
    }

    /// `other` applied after `self`.
    pub fn then(&self, other: &Transform) -> Transform {
        let mut perm = [0; 3];
        let mut flip = [false; 3];
        for i in 0..3 {
            perm[i] = self.perm[other.perm[i]];
            flip[i] = other.flip[i] ^ self.flip[other.perm[i]];
        }
        Transform { perm, flip }
    }

    /// A uniformly chosen rotation followed by independent per-axis flips.
    pub fn random<R: Rng>(rng: &mut R, rotations: bool, flips: bool) -> Transform {
        let mut t = Transform::IDENTITY;
        if rotations {
            let all = Transform::rotations();
            t = all[rng.random_range(0..all.len())];
        }
        if flips {
            for axis in 0..3 {
                if rng.random_bool(0.5) {
                    t = t.then(&Transform::flip_axis(axis));
                }
            }
        }
        t
    }

    /// Applies the transform to a cube of side `s` stored depth-major.
    pub fn apply<T: Copy>(&self, data: &[T], s: usize) -> Vec<T> {
        assert_eq!(data.len(), s * s * s, "transform needs a cubic volume");
        let mut out = Vec::with_capacity(data.len());
        let strides = [s * s, s, 1];
        for y0 in 0..s {
            for y1 in 0..s {
                for y2 in 0..s {
                    let y = [y0, y1, y2];
                    let mut src = 0;
                    for i in 0..3 {
                        let c = if self.flip[i] { s - 1 - y[i] } else { y[i] };
                        src += c * strides[self.perm[i]];
                    }
                    out.push(data[src]);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(s: usize) -> Vec<u32> {
        (0..(s * s * s) as u32).collect()
    }

    #[test]
    fn group_sizes() {
        assert_eq!(Transform::all().len(), 48);
        assert_eq!(Transform::rotations().len(), 24);
        for axis in 0..3 {
            assert_eq!(Transform::rot90(axis).det(), 1);
            assert_eq!(Transform::flip_axis(axis).det(), -1);
        }
    }

    #[test]
    fn composition_matches_sequential_application() {
        let data = cube(3);
        for a in Transform::all() {
            for b in [Transform::rot90(0), Transform::rot90(2), Transform::flip_axis(1)] {
                assert_eq!(a.then(&b).apply(&data, 3), b.apply(&a.apply(&data, 3), 3));
            }
        }
    }

    #[test]
    fn quarter_turn_moves_corner() {
        // 2x2x2, rotate about depth: (z, y, x) -> (z, x, 1 - y)
        let data = cube(2);
        let r = Transform::rot90(0).apply(&data, 2);
        // input voxel (0,0,1) = 1 lands at (0,1,1) = index 3
        assert_eq!(r[3], 1);
    }
}
