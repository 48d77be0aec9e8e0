use std::path::PathBuf;

use ldvae::data::{
    add_noise, generate_cube, measured_snr_db, parse_spectral_library, read_cube,
    synthetic_library, write_cube, HsiCube,
};
use ldvae::distributions::{DirichletParams, KlVariant};
use ldvae::model::{read_checkpoint, write_checkpoint, Architecture};
use ldvae::tensor::{Activation, LayerSpec};
use ldvae::training::{init_model, init_parameters};
use ldvae::Error;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn toy_library_fills_gaps_by_interpolation() {
    let lib = parse_spectral_library(fixture("toy_library.csv")).unwrap();
    assert_eq!(lib.names(), ["soil", "vegetation", "water", "concrete"]);
    assert_eq!(lib.bands(), 12);
    assert_eq!(lib.wavelengths().unwrap()[0], 400.0);
    let veg = lib.spectra()[1].values();
    let water = lib.spectra()[2].values();
    // Hand-computed: interior gaps are linear in wavelength, edge gaps hold
    // the nearest valid value.
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    assert!(close(veg[2], 0.07));
    assert!(close(veg[11], 0.20));
    assert!(close(water[0], 0.09));
    assert!(close(water[5], 0.04 - 0.02 / 3.0));
    assert!(close(water[6], 0.04 - 0.04 / 3.0));
    assert!(close(lib.spectra()[0].values()[4], 0.26));
}

#[test]
fn malformed_library_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "# c\nwavelength_nm,a,b\n400,0.1,0.2\n500,0.1\n").unwrap();
    match parse_spectral_library(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }
}

#[test]
fn cube_file_round_trip_is_byte_identical() {
    let lib = parse_spectral_library(fixture("toy_library.csv")).unwrap();
    let cube = add_noise(
        &generate_cube(&lib, 9, 7, &[0.8, 1.0, 1.2, 2.0], 5).unwrap(),
        25.0,
        6,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.hsi"), dir.path().join("b.hsi"));
    write_cube(&cube, &a).unwrap();
    let back = read_cube(&a).unwrap();
    assert_eq!(back, cube);
    write_cube(&back, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let plain = HsiCube::new(2, 3, 4, (0..24).map(|i| i as f32 * 0.1).collect()).unwrap();
    write_cube(&plain, &a).unwrap();
    assert_eq!(read_cube(&a).unwrap(), plain);
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let arch = Architecture {
        n_bands: 12,
        n_endmembers: 4,
        encoder_hidden: vec![16, 8],
        decoder_hidden: vec![8, 16],
    };
    let mut model = init_model(
        &arch,
        DirichletParams::symmetric(4, 1.0).unwrap(),
        1.0,
        KlVariant::Paper,
        9,
    )
    .unwrap();
    model.metadata.seed = Some(9);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    write_checkpoint(&model, &a).unwrap();
    let back = read_checkpoint(&a).unwrap();
    assert_eq!(back, model);
    write_checkpoint(&back, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn generated_abundance_moments_match_the_prior() {
    let prior = [0.5, 1.0, 2.0, 4.5];
    let lib = synthetic_library(4, 6, 3).unwrap();
    let cube = generate_cube(&lib, 100, 100, &prior, 17).unwrap();
    let total: f64 = prior.iter().sum();
    let n = cube.pixel_count() as f64;
    for (j, a) in prior.iter().enumerate() {
        let values: Vec<f64> = (0..cube.pixel_count())
            .map(|i| cube.abundances(i).unwrap()[j])
            .collect();
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let want_mean = a / total;
        let want_var = want_mean * (1.0 - want_mean) / (total + 1.0);
        assert!(
            (mean - want_mean).abs() < 0.02,
            "mean {j}: {mean} vs {want_mean}"
        );
        assert!(
            (var - want_var).abs() < 0.02,
            "var {j}: {var} vs {want_var}"
        );
    }
}

#[test]
fn noise_hits_the_requested_snr() {
    let lib = synthetic_library(4, 50, 1).unwrap();
    let clean = generate_cube(&lib, 64, 64, &[1.0; 4], 2).unwrap();
    for snr in [10.0, 20.0, 30.0] {
        let noisy = add_noise(&clean, snr, 3).unwrap();
        let measured = measured_snr_db(&clean, &noisy).unwrap();
        assert!(
            (measured - snr).abs() < 0.5,
            "{snr} dB requested, {measured} measured"
        );
    }
}

#[test]
fn glorot_variance_for_a_wide_layer() {
    let spec = LayerSpec::new(512, 256, Activation::Relu).unwrap();
    let layer = &init_parameters(&[spec], 123).unwrap()[0];
    let w = layer.weights.data();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let limit = (6.0f64 / 768.0).sqrt();
    let want = limit * limit / 3.0;
    assert!((var - want).abs() < 0.1 * want, "{var} vs {want}");
    assert!(layer.bias.data().iter().all(|&b| b == 0.0));
}
