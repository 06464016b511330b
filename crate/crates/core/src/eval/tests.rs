use std::path::Path;

use proptest::prelude::*;

use super::*;
use crate::io::blob::{Blob, BlobData};
use crate::io::manifest::{Manifest, ManifestRecord};
use crate::rng;

fn noise(h: usize, w: usize, c: usize, seed: u64) -> FrameImage {
    let mut r = rng::stream(seed, "image");
    let data = (0..h * w * c).map(|_| (rng::unit(&mut r) * 256.0) as u8).collect();
    FrameImage::new(h, w, c, data).unwrap()
}

#[test]
fn psnr_goldens() {
    let a = noise(96, 96, 3, 1);
    assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    let base = FrameImage::filled(96, 96, 3, 100).unwrap();
    let off = FrameImage::filled(96, 96, 3, 101).unwrap();
    let p = psnr(&base, &off).unwrap();
    assert!((p - 48.13).abs() < 0.01, "{p}");
    assert!((p - 20.0 * 255f64.log10()).abs() < 1e-12);

    let n = 64 * 64;
    let zero = FrameImage::filled(64, 64, 1, 0).unwrap();
    let mut data = vec![0u8; n];
    data[1234] = 255;
    let one = FrameImage::new(64, 64, 1, data).unwrap();
    assert!((psnr(&zero, &one).unwrap() - 10.0 * (n as f64).log10()).abs() < 1e-12);
    assert!(psnr(&zero, &FrameImage::filled(64, 63, 1, 0).unwrap()).is_err());
}

#[test]
fn ssim_identical_is_one() {
    for c in [1, 3] {
        let a = noise(96, 96, c, 2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn ssim_of_constant_images_is_the_luminance_term() {
    let a = FrameImage::filled(20, 20, 1, 40).unwrap();
    let b = FrameImage::filled(20, 20, 1, 200).unwrap();
    let c1 = (0.01f64 * 255.0).powi(2);
    let (m1, m2) = (40.0f64, 200.0f64);
    let expected = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
    assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
}

#[test]
fn ssim_against_negative_is_negative() {
    let data: Vec<u8> = (0..32 * 32).map(|i| if (i % 32) < 16 { 30 } else { 220 }).collect();
    let a = FrameImage::new(32, 32, 1, data.clone()).unwrap();
    let b = FrameImage::new(32, 32, 1, data.iter().map(|v| 255 - v).collect()).unwrap();
    assert!(ssim(&a, &b).unwrap() < 0.0);
}

#[test]
fn ssim_matches_direct_window_sums() {
    let (a, b) = (noise(15, 13, 3, 3), noise(15, 13, 3, 4));
    let g = gaussian_window(11, 1.5);
    let (x, y) = (a.luma(), b.luma());
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for r in 0..=15 - 11 {
        for c in 0..=13 - 11 {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = g[i] * g[j];
                    let (p, q) = (x[(r + i) * 13 + c + j], y[(r + i) * 13 + c + j]);
                    mx += wt * p;
                    my += wt * q;
                    sxx += wt * p * p;
                    syy += wt * q * q;
                    sxy += wt * p * q;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    assert!((ssim(&a, &b).unwrap() - total / count as f64).abs() < 1e-9);
}

#[test]
fn ssim_rejects_small_or_mismatched_images() {
    let a = FrameImage::filled(10, 40, 1, 0).unwrap();
    assert!(ssim(&a, &a).is_err());
    let b = FrameImage::filled(40, 40, 1, 0).unwrap();
    let c = FrameImage::filled(40, 40, 3, 0).unwrap();
    assert!(ssim(&b, &c).is_err());
}

#[test]
fn gaussian_window_is_normalised_and_symmetric() {
    let g = gaussian_window(11, 1.5);
    assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    for i in 0..11 {
        assert_eq!(g[i], g[10 - i]);
    }
    assert!((g[5] / g[4] - (1.0 / (2.0 * 2.25f64)).exp()).abs() < 1e-12);
}

#[test]
fn bt601_luma() {
    let img = FrameImage::new(1, 2, 3, vec![255, 0, 0, 10, 20, 30]).unwrap();
    let l = img.luma();
    assert!((l[0] - 0.299 * 255.0).abs() < 1e-12);
    assert!((l[1] - (2.99 + 11.74 + 3.42)).abs() < 1e-12);
}

fn set(frames: &[&[(f64, f64)]]) -> LandmarkSet {
    LandmarkSet::new(frames.iter().map(|f| f.to_vec()).collect()).unwrap()
}

#[test]
fn lmd_examples() {
    let gt = set(&[&[(10.0, 10.0), (20.0, 12.0), (15.0, 18.0)], &[(11.0, 9.0), (21.0, 13.0), (16.0, 19.0)]]);
    assert_eq!(lmd(&gt, &gt).unwrap(), 0.0);
    let moved = LandmarkSet::new(
        gt.frames()
            .iter()
            .map(|f| f.iter().map(|p| (p.0 + 5.0, p.1 + 5.0)).collect())
            .collect(),
    )
    .unwrap();
    assert!(lmd(&moved, &gt).unwrap().abs() < 1e-9);

    let truth = set(&[&[(4.0, 4.0), (6.0, 4.0)]]);
    let gen = set(&[&[(3.0, 4.0), (7.0, 4.0)]]);
    assert!((lmd(&gen, &truth).unwrap() - 1.0).abs() < 1e-12);

    assert!(lmd(&gen, &gt).is_err());
    assert!(lmd(&set(&[&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]]), &gt).is_err());
}

#[test]
fn landmark_tsv_parsing() {
    let s = parse_landmarks("1\t0\t3\t4\n0\t1\t2.5\t1\n0\t0\t1\t1\n1\t1\t5\t6\n", "l").unwrap();
    assert_eq!(s.frames(), &[vec![(1.0, 1.0), (2.5, 1.0)], vec![(3.0, 4.0), (5.0, 6.0)]]);
    assert!(parse_landmarks("0\t0\t1\n", "l").is_err());
    assert!(parse_landmarks("0\t0\t1\t1\n0\t0\t1\t1\n", "l").is_err());
    assert!(parse_landmarks("0\t0\t1\t1\n1\t1\t1\t1\n", "l").is_err());
}

fn write_frames(dir: &Path, frames: &[FrameImage], png: bool) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, f) in frames.iter().enumerate() {
        if png {
            let p = dir.join(format!("{i:04}.png"));
            let color = if f.channels() == 3 { image::ColorType::Rgb8 } else { image::ColorType::L8 };
            image::save_buffer(&p, f.data(), f.width() as u32, f.height() as u32, color).unwrap();
        } else {
            let b = Blob::new("frame", vec![f.height(), f.width(), f.channels()], BlobData::U8(f.data().to_vec()))
                .unwrap();
            crate::io::blob::save(&dir.join(format!("{i:04}.blob")), &[b]).unwrap();
        }
    }
}

#[test]
fn png_and_blob_frames_load_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let frames = vec![noise(12, 9, 3, 5), noise(12, 9, 3, 6)];
    write_frames(&dir.path().join("png"), &frames, true);
    write_frames(&dir.path().join("blob"), &frames, false);
    assert_eq!(load_frames(&dir.path().join("png")).unwrap(), frames);
    assert_eq!(load_frames(&dir.path().join("blob")).unwrap(), frames);
    let gray = vec![noise(7, 8, 1, 7)];
    write_frames(&dir.path().join("gray"), &gray, true);
    assert_eq!(load_frames(&dir.path().join("gray")).unwrap(), gray);
}

fn landmarks_tsv(frames: usize, shift: f64) -> String {
    let mut s = String::new();
    for f in 0..frames {
        for i in 0..20 {
            let a = i as f64 * std::f64::consts::TAU / 20.0;
            s.push_str(&format!("{f}\t{i}\t{}\t{}\n", 48.0 + 10.0 * a.cos() + shift, 60.0 + 4.0 * a.sin() + f as f64));
        }
    }
    s
}

/// Ground truth and identical generated outputs for `ids`.
fn identical_corpus(root: &Path, ids: &[&str]) -> Manifest {
    let outputs = root.join("out");
    let mut m = Manifest::default();
    for (k, id) in ids.iter().enumerate() {
        let frames: Vec<FrameImage> = (0..3).map(|j| noise(24, 24, 3, (k * 10 + j) as u64)).collect();
        let gt = root.join("gt").join(id);
        write_frames(&gt.join("frames"), &frames, true);
        std::fs::write(gt.join("lm.tsv"), landmarks_tsv(3, 0.0)).unwrap();
        let (gf, gl) = report::generated_paths(&outputs, id);
        write_frames(&gf, &frames, false);
        std::fs::write(gl, landmarks_tsv(3, 2.0)).unwrap();
        m.records.push(ManifestRecord {
            id: id.to_string(),
            wav_path: Some("x.wav".into()),
            align_path: "x.tsv".into(),
            speaker_stub_id: Some(0),
            frames_dir: Some(gt.join("frames")),
            landmarks_path: Some(gt.join("lm.tsv")),
            ..Default::default()
        });
    }
    m
}

#[test]
fn report_on_identical_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let m = identical_corpus(dir.path(), &["b", "a", "c"]);
    let out = dir.path().join("out");
    let r = eval_report(&m, &out);
    assert!(r.skipped.is_empty(), "{:?}", r.skipped);
    let ids: Vec<&str> = r.rows.iter().map(|x| x.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    for row in &r.rows {
        assert_eq!(row.psnr, 100.0);
        assert!((row.ssim - 1.0).abs() < 1e-9);
        assert!(row.lmd.abs() < 1e-9);
    }
    let csv = r.to_csv();
    assert!(csv.starts_with("utterance_id,psnr,ssim,lmd,lse_c,lse_d\na,100.000000,1.000000,0.000000,n/a,n/a\n"));
    assert!(csv.ends_with("mean,100.000000,1.000000,0.000000,n/a,n/a\n"));

    let mut shuffled = m.clone();
    shuffled.records.reverse();
    assert_eq!(eval_report(&shuffled, &out).to_csv(), csv);
    assert_eq!(eval_report(&m, &out).to_csv(), csv);
}

#[test]
fn missing_files_are_skipped_and_listed() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = identical_corpus(dir.path(), &["a", "b"]);
    let out = dir.path().join("out");
    std::fs::remove_file(report::generated_paths(&out, "b").1).unwrap();
    m.records[0].frames_dir = None;
    let r = eval_report(&m, &out);
    assert!(r.rows.is_empty());
    assert_eq!(r.skipped.len(), 2);
    assert!(r.skipped[1].1.contains("landmarks.tsv"), "{:?}", r.skipped);
    assert!(r.to_csv().ends_with("mean,n/a,n/a,n/a,n/a,n/a\n"));
}

fn arb_pair() -> impl Strategy<Value = (FrameImage, FrameImage)> {
    (11usize..16, 11usize..16, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(h, w, c)| {
        let n = h * w * c;
        (
            proptest::collection::vec(any::<u8>(), n),
            proptest::collection::vec(any::<u8>(), n),
        )
            .prop_map(move |(a, b)| (FrameImage::new(h, w, c, a).unwrap(), FrameImage::new(h, w, c, b).unwrap()))
    })
}

fn arb_landmarks(frames: usize, points: usize) -> impl Strategy<Value = LandmarkSet> {
    proptest::collection::vec(proptest::collection::vec((0.0f64..96.0, 0.0f64..96.0), points), frames)
        .prop_map(|f| LandmarkSet::new(f).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psnr_and_ssim_are_symmetric((a, b) in arb_pair()) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_at_most_one_with_equality_for_equal_images((a, b) in arb_pair()) {
        let s = ssim(&a, &b).unwrap();
        prop_assert!(s <= 1.0 + 1e-12 && s >= -1.0 - 1e-12);
        if a.luma() != b.luma() {
            prop_assert!(s < 1.0);
        }
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lmd_is_symmetric_and_zero_on_itself(a in arb_landmarks(3, 5), b in arb_landmarks(3, 5)) {
        prop_assert_eq!(lmd(&a, &a).unwrap(), 0.0);
        prop_assert!((lmd(&a, &b).unwrap() - lmd(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(lmd(&a, &b).unwrap() >= 0.0);
    }
}
