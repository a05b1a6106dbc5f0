use std::fs;

use cpseg::data::{
    binarize, extract_patches, fuse_predictions, gen_phantom, read_image, read_mask, read_volume, write_volume, AnyVolume, Image,
    Mask, PatchGrid, PhantomSpec, Tissue,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn round_trip_is_bit_exact_on_random_volumes() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..5 {
        let dims = [rng.random_range(1..20), rng.random_range(1..20), rng.random_range(1..20)];
        let spacing = [rng.random_range(0.3..2.0), rng.random_range(0.3..2.0), rng.random_range(0.3..2.0)];
        let n = dims.iter().product();
        // raw bit patterns, including subnormals and negative zero
        let data: Vec<f32> = (0..n).map(|_| f32::from_bits(rng.random::<u32>() & 0xbfff_ffff)).collect();
        let img = Image::new(dims, spacing, data).unwrap();
        let path = dir.path().join(format!("img{i}.nii"));
        write_volume(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.dims, img.dims);
        assert_eq!(bits(&back.spacing), bits(&img.spacing));
        assert_eq!(back.affine, img.affine);
        assert_eq!(bits(&back.data), bits(&img.data));

        let mask = Mask::new(dims, spacing, (0..n).map(|_| rng.random_range(0..2)).collect()).unwrap();
        let path = dir.path().join(format!("mask{i}.nii"));
        write_volume(&mask, &path).unwrap();
        assert_eq!(read_mask(&path).unwrap(), mask);
        assert_eq!(i32::from_le_bytes(fs::read(&path).unwrap()[..4].try_into().unwrap()), 348);
    }
}

fn put_i16(h: &mut [u8], at: usize, v: i16) {
    h[at..at + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(h: &mut [u8], at: usize, v: f32) {
    h[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

#[test]
fn hand_built_float_volume_parses() {
    // header laid out from the NIfTI-1 field table, 4 extension bytes, payload
    let mut bytes = vec![0u8; 352];
    bytes[0..4].copy_from_slice(&348i32.to_le_bytes());
    for (i, d) in [3i16, 2, 2, 2, 1, 1, 1, 1].iter().enumerate() {
        put_i16(&mut bytes, 40 + 2 * i, *d);
    }
    put_i16(&mut bytes, 70, 16);
    put_i16(&mut bytes, 72, 32);
    for (i, p) in [1.0f32, 0.8, 0.9, 1.1].iter().enumerate() {
        put_f32(&mut bytes, 76 + 4 * i, *p);
    }
    put_f32(&mut bytes, 108, 352.0);
    put_f32(&mut bytes, 112, 1.0);
    bytes[344..348].copy_from_slice(b"n+1\0");
    let values = [0.5f32, -1.0, 2.25, 3.0, 1e-3, -0.0, 7.5, 100.0];
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture.nii");
    fs::write(&path, &bytes).unwrap();
    let AnyVolume::F32(v) = read_volume(&path).unwrap() else {
        panic!("expected a float volume");
    };
    assert_eq!(v.dims, [2, 2, 2]);
    assert_eq!(v.spacing, [0.8, 0.9, 1.1]);
    assert_eq!(bits(&v.data), bits(&values));
    assert_eq!(v.get(1, 0, 0), -1.0);
    assert_eq!(v.get(0, 1, 0), 2.25);
    assert_eq!(v.get(0, 0, 1), 1e-3);
}

#[test]
fn phantoms_are_reproducible() {
    let spec = PhantomSpec { seed: 42, ..PhantomSpec::default() };
    let (i1, l1) = gen_phantom(&spec).unwrap();
    let (i2, l2) = gen_phantom(&spec).unwrap();
    assert_eq!(bits(&i1.data), bits(&i2.data));
    assert_eq!(l1, l2);
    let (i3, _) = gen_phantom(&PhantomSpec { seed: 43, ..spec }).unwrap();
    assert_ne!(bits(&i1.data), bits(&i3.data));
}

#[test]
fn flat_shell_volume_matches_the_analytic_shell() {
    for (r, t) in [(16.0, 2.4), (12.0, 1.6), (20.0, 3.2)] {
        let spec = PhantomSpec {
            radius_mm: r,
            thickness_mm: t,
            fold_amplitude_mm: 0.0,
            ..PhantomSpec::default()
        };
        let (_, label) = gen_phantom(&spec).unwrap();
        let voxel: f64 = spec.spacing_mm.iter().map(|&s| s as f64).product();
        let expected = 4.0 * std::f64::consts::PI * r * r * t / voxel;
        let got = label.count() as f64;
        assert!((got - expected).abs() / expected < 0.15, "r={r} t={t}: {got} voxels vs {expected:.0}");
    }
}

#[test]
fn noiseless_shell_voxels_hold_the_tissue_mean() {
    let flat = |mean| Tissue { mean, std: 0.0 };
    let spec = PhantomSpec {
        blur_mm: 0.0,
        noise_std: 0.0,
        inside: flat(0.8),
        shell: flat(0.35),
        outside: flat(1.0),
        seed: 3,
        ..PhantomSpec::default()
    };
    let (image, label) = gen_phantom(&spec).unwrap();
    assert!(label.count() > 0);
    for (v, l) in image.data.iter().zip(&label.data) {
        if *l != 0 {
            assert_eq!(*v, 0.35);
        }
    }
}

#[test]
fn every_shell_voxel_has_a_shell_neighbour() {
    for seed in 0..3 {
        let (_, label) = gen_phantom(&PhantomSpec { seed, ..PhantomSpec::default() }).unwrap();
        let [nx, ny, nz] = label.dims;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if label.get(x, y, z) == 0 {
                        continue;
                    }
                    let mut found = false;
                    'n: for dz in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                let (a, b, c) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                                if (dx, dy, dz) == (0, 0, 0) || a < 0 || b < 0 || c < 0 {
                                    continue;
                                }
                                let (a, b, c) = (a as usize, b as usize, c as usize);
                                if a < nx && b < ny && c < nz && label.get(a, b, c) != 0 {
                                    found = true;
                                    break 'n;
                                }
                            }
                        }
                    }
                    assert!(found, "isolated shell voxel at {x},{y},{z} (seed {seed})");
                }
            }
        }
    }
}

#[test]
fn patch_grid_examples() {
    assert_eq!(PatchGrid::new([64; 3], 64, 32).unwrap().len(), 1);
    let g = PatchGrid::new([96; 3], 64, 32).unwrap();
    assert_eq!(g.len(), 8);
    assert!(g.origins.iter().all(|o| o.iter().all(|&c| c == 0 || c == 32)));
    let g = PatchGrid::new([70; 3], 64, 32).unwrap();
    assert_eq!(g.len(), 8);
    assert!(g.origins.iter().all(|o| o.iter().all(|&c| c == 0 || c == 6)));
}

#[test]
fn fusion_examples() {
    let vol = Image::filled([64, 64, 64], [0.8; 3], 0.0);
    let grid = PatchGrid::for_volume(&vol, 64, 32).unwrap();
    let patch: Vec<f32> = (0..64 * 64 * 64).map(|i| (i % 97) as f32 / 97.0).collect();
    assert_eq!(fuse_predictions(&grid, &[patch.clone()], &vol).unwrap().data, patch);

    // two patches along x overlapping on 16..64: zeros then ones
    let vol = Image::filled([80, 64, 64], [0.8; 3], 0.0);
    let grid = PatchGrid::for_volume(&vol, 64, 32).unwrap();
    assert_eq!(grid.origins, vec![[0, 0, 0], [0, 0, 16]]);
    let n = 64 * 64 * 64;
    let fused = fuse_predictions(&grid, &[vec![0.0; n], vec![1.0; n]], &vol).unwrap();
    assert_eq!(fused.get(10, 5, 5), 0.0);
    assert_eq!(fused.get(40, 5, 5), 0.5);
    assert_eq!(fused.get(70, 5, 5), 1.0);
}

#[test]
fn binarize_examples() {
    let vol = |v| Image::filled([4, 4, 4], [0.8; 3], v);
    assert_eq!(binarize(&vol(0.0), 0.5).count(), 0);
    assert_eq!(binarize(&vol(1.0), 0.5).count(), 64);
    assert_eq!(binarize(&vol(0.5), 0.5).count(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn constant_patches_fuse_to_the_constant(
        d in 1usize..40, h in 1usize..40, w in 1usize..40, p in 4usize..20, s in 1usize..20, c in 0.0f32..1.0
    ) {
        let s = s.min(p);
        let vol = Image::filled([w, h, d], [1.0; 3], 0.0);
        let grid = PatchGrid::for_volume(&vol, p, s).unwrap();
        let patches = extract_patches(&vol, &grid).into_iter().map(|x| vec![c; x.len()]).collect::<Vec<_>>();
        let fused = fuse_predictions(&grid, &patches, &vol).unwrap();
        prop_assert!(fused.data.iter().all(|&v| v == c));
    }
}
