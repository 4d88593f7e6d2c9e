use cryda_core::dsp::{
    detect_activity, estimate_pitch, noise_segments, ActivityConfig, AudioClip, PitchConfig,
};
use cryda_core::evaldiag::{wasserstein1d, Histogram};
use cryda_core::rng;
use cryda_core::synth::{
    apply_domain, channel_only, generate_corpus, synth_cry, Contour, CorpusConfig, CorpusManifest,
    DomainProfile, Label, ManifestRow, Split, SplitFractions, PEAK, SOURCE, TARGET,
};
use cryda_core::Error;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

fn flat(f0: f64, jitter: f64) -> cryda_core::synth::CryParams {
    cryda_core::synth::CryParams {
        f0_mean: f0,
        f0_contour: Contour::Flat,
        jitter,
        ..Default::default()
    }
}

fn small_corpus(seed: u64) -> cryda_core::synth::Corpus {
    let cfg = CorpusConfig {
        patients_per_domain: 20,
        clips_per_patient: 2,
        noise_clips_per_domain: 3,
        ..Default::default()
    };
    generate_corpus(&cfg, seed).unwrap()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn flat_jitter_free_cry_has_the_requested_pitch() {
    let clip = synth_cry(&flat(400.0, 0.0), 3).unwrap();
    let median = estimate_pitch(&clip, &PitchConfig::default())
        .unwrap()
        .median_f0()
        .unwrap();
    assert!((median - 400.0).abs() / 400.0 < 0.01, "median {median}");
}

#[test]
fn arc_cry_mean_pitch_tracks_the_generator() {
    let p = cryda_core::synth::CryParams { f0_mean: 450.0, ..Default::default() };
    let clip = synth_cry(&p, 11).unwrap();
    let mean = estimate_pitch(&clip, &PitchConfig::default())
        .unwrap()
        .mean_f0()
        .unwrap();
    assert!((mean - 450.0).abs() / 450.0 < 0.03, "mean {mean}");
}

#[test]
fn two_expirations_with_half_second_gap_give_two_segments() {
    let p = cryda_core::synth::CryParams { n_expirations: 2, gap_dur: 0.5, ..flat(500.0, 0.01) };
    let clip = synth_cry(&p, 0).unwrap();
    let segs = detect_activity(&clip, &ActivityConfig::default());
    assert_eq!(segs.len(), 2, "{:?}", segs.segments);
}

#[test]
fn cry_synthesis_is_deterministic_and_peak_normalized() {
    let p = cryda_core::synth::CryParams::default();
    let a = synth_cry(&p, 9).unwrap();
    let b = synth_cry(&p, 9).unwrap();
    assert_eq!(a, b);
    let peak = a.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    assert!((peak - PEAK).abs() < 1e-6);
    assert_ne!(a.samples, synth_cry(&p, 10).unwrap().samples);
}

#[test]
fn invalid_params_are_rejected() {
    for p in [flat(900.0, 0.0), flat(400.0, 0.2), flat(200.0, 0.0)] {
        assert!(matches!(synth_cry(&p, 0), Err(Error::Parameter(_))));
    }
}

/// Replays the synthesis recurrence for the instantaneous frequency only.
fn f0_oracle(p: &cryda_core::synth::CryParams, seed: u64) -> Vec<f32> {
    let sr = p.sample_rate as f64;
    let n = (p.duration * sr).round() as usize;
    let mut out = vec![0.0f32; n];
    let mut r = rng::stream(seed, &[0x637279]);
    for (start, end) in p.expiration_spans() {
        let len = end.min(n) - start;
        let (mut phase, mut jit) = (0.0f64, 1.0f64);
        for i in 0..len {
            let u = i as f64 / (len - 1) as f64;
            let shape = match p.f0_contour {
                Contour::Flat => 0.0,
                Contour::Arc => (PI * u).sin() - 2.0 / PI,
                Contour::Falling => 0.5 - u,
            };
            let f = p.f0_mean * (1.0 + 0.15 * shape) * jit;
            out[start + i] = f as f32;
            phase += 2.0 * PI * f / sr;
            if phase >= 2.0 * PI {
                phase -= 2.0 * PI;
                let z: f64 = StandardNormal.sample(&mut r);
                jit = (1.0 + p.jitter * z).clamp(0.7, 1.3);
            }
        }
    }
    out
}

#[test]
fn stored_f0_track_matches_the_synthesis_equations_exactly() {
    for (contour, jitter, seed) in [
        (Contour::Arc, 0.01, 1),
        (Contour::Flat, 0.04, 2),
        (Contour::Falling, 0.0, 3),
    ] {
        let p = cryda_core::synth::CryParams { f0_contour: contour, jitter, f0_mean: 520.0, ..Default::default() };
        let clip = synth_cry(&p, seed).unwrap();
        let truth = clip.truth.as_ref().unwrap();
        let oracle = f0_oracle(&p, seed);
        let worst = truth
            .f0
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert_eq!(worst, 0.0, "{contour:?}");
    }
}

#[test]
fn vanishing_noise_leaves_the_channel_filtered_clip() {
    let clip = synth_cry(&cryda_core::synth::CryParams::default(), 4).unwrap();
    let profile = DomainProfile::hospital_b();
    let out = apply_domain(&clip, &profile, 60.0, 7).unwrap();
    let reference = channel_only(&clip, &profile);
    let diff: Vec<f64> = out.samples.iter().zip(&reference).map(|(&a, b)| a as f64 - b).collect();
    assert!(rms(&diff) < 0.01 * rms(&reference));
    assert_eq!(out.metadata["domain"], profile.id);
}

#[test]
fn requested_snr_is_realized_over_voiced_samples() {
    for (profile, seed) in [(DomainProfile::hospital_a(), 1), (DomainProfile::hospital_b(), 2)] {
        let mut clip = synth_cry(&cryda_core::synth::CryParams::default(), seed).unwrap();
        // keep the mix well inside full scale so no joint rescaling happens
        clip.samples.iter_mut().for_each(|v| *v *= 0.3);
        let out = apply_domain(&clip, &profile, 10.0, seed).unwrap();
        let clean = channel_only(&clip, &profile);
        let voiced: Vec<bool> = clip.truth.as_ref().unwrap().f0.iter().map(|&f| f > 0.0).collect();
        let (mut ps, mut pn, mut n) = (0.0, 0.0, 0.0);
        for ((&m, &c), &v) in out.samples.iter().zip(&clean).zip(&voiced) {
            if v {
                ps += c * c;
                pn += (m as f64 - c).powi(2);
                n += 1.0;
            }
        }
        let snr = 10.0 * ((ps / n) / (pn / n)).log10();
        assert!((snr - 10.0).abs() <= 0.5, "{}: {snr} dB", profile.id);
        let recorded: f64 = out.metadata["snr_db"].parse().unwrap();
        assert!((recorded - 10.0).abs() <= 0.5);
    }
}

#[test]
fn apply_domain_is_deterministic() {
    let clip = synth_cry(&cryda_core::synth::CryParams::default(), 5).unwrap();
    let p = DomainProfile::hospital_a();
    assert_eq!(apply_domain(&clip, &p, 12.0, 3).unwrap(), apply_domain(&clip, &p, 12.0, 3).unwrap());
}

#[test]
fn corpus_is_a_pure_function_of_config_and_seed() {
    let a = small_corpus(0);
    let b = small_corpus(0);
    assert_eq!(a.manifest(), b.manifest());
    assert!(a.clips.iter().zip(&b.clips).all(|(x, y)| x.clip.samples == y.clip.samples));
    assert!(a.noise.iter().zip(&b.noise).all(|(x, y)| x.clip.samples == y.clip.samples));
    let c = small_corpus(1);
    assert_ne!(a.clips[0].clip.samples, c.clips[0].clip.samples);
}

#[test]
fn written_corpus_is_bit_identical_across_runs() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        small_corpus(4).write(d.path()).unwrap();
    }
    let corpus = small_corpus(4);
    let files = ["manifest.csv".to_string(), "noise_manifest.csv".to_string(), "corpus.json".to_string()]
        .into_iter()
        .chain(corpus.clips.iter().map(|c| c.row.path.clone()))
        .chain(corpus.noise.iter().map(|n| n.row.path.clone()));
    for f in files {
        let a = std::fs::read(dirs[0].path().join(&f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let back = cryda_core::dsp::wav::read_wav(&dirs[0].path().join(&corpus.clips[3].row.path)).unwrap();
    assert_eq!(back.samples, corpus.clips[3].clip.samples);
}

#[test]
fn manifest_is_patient_disjoint_and_class_balanced() {
    for seed in 0..3 {
        let m = small_corpus(seed).manifest();
        assert!(m.leaking_patients().is_empty());
        for ((domain, split), injury_share) in m.class_balance() {
            assert!((injury_share - 0.5).abs() <= 0.1, "{domain}/{split}: {injury_share}");
        }
    }
}

#[test]
fn infeasible_split_fractions_are_a_config_error() {
    let cfg = CorpusConfig {
        splits: SplitFractions { train: 0.7, valid: 0.2, test: 0.2 },
        ..Default::default()
    };
    assert!(matches!(generate_corpus(&cfg, 0), Err(Error::Config(_))));
    let tiny = CorpusConfig { patients_per_domain: 2, ..Default::default() };
    assert!(matches!(generate_corpus(&tiny, 0), Err(Error::Config(_))));
}

#[test]
fn class_acoustics_are_identical_across_domains() {
    let cfg = CorpusConfig::default();
    let [(_, a), (_, b)] = cfg.domains();
    assert_ne!(a.noise_kind, b.noise_kind);
    assert_ne!(a.channel, b.channel);
    let c = small_corpus(2);
    for domain in [SOURCE, TARGET] {
        for clip in c.clips.iter().filter(|c| c.row.domain == domain) {
            let ac = cfg.acoustics(clip.row.label);
            assert_eq!(clip.params.f0_contour, ac.contour);
            assert_eq!(clip.params.jitter, ac.jitter);
        }
    }
}

fn pooled_pitch(clips: &[&AudioClip]) -> Histogram {
    let mut h = Histogram::new(250.0, 1000.0, 10.0).unwrap();
    for c in clips {
        for f in estimate_pitch(c, &PitchConfig::default()).unwrap().voiced() {
            h.add(f as f64);
        }
    }
    h
}

#[test]
fn pooled_pitch_distributions_match_across_domains() {
    let c = generate_corpus(&CorpusConfig { patients_per_domain: 30, clips_per_patient: 3, ..Default::default() }, 0).unwrap();
    let pick = |d: &str| c.clips.iter().filter(|x| x.row.domain == d).map(|x| &x.clip).collect::<Vec<_>>();
    let w = wasserstein1d(&pooled_pitch(&pick(SOURCE)), &pooled_pitch(&pick(TARGET))).unwrap();
    assert!(w < 10.0, "W1 = {w} Hz");
}

#[test]
fn activity_detector_covers_voiced_samples() {
    let c = small_corpus(5);
    let (mut covered, mut voiced) = (0usize, 0usize);
    for clip in c.clips.iter().map(|x| &x.clip) {
        let truth = clip.truth.as_ref().unwrap();
        let mut active = vec![false; clip.len()];
        for s in detect_activity(clip, &ActivityConfig::default()).iter() {
            active[s.start..s.end].iter_mut().for_each(|a| *a = true);
        }
        for (i, a) in active.iter().enumerate() {
            if truth.voiced(i) {
                voiced += 1;
                covered += *a as usize;
            }
        }
    }
    let share = covered as f64 / voiced as f64;
    assert!(share >= 0.9, "coverage {share}");
}

fn noise_iou_counts(clip: &AudioClip) -> (usize, usize) {
    let truth = clip.truth.as_ref().unwrap();
    let mut found = vec![false; clip.len()];
    for s in noise_segments(clip, &ActivityConfig::default()).iter() {
        found[s.start..s.end].iter_mut().for_each(|a| *a = true);
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (i, &f) in found.iter().enumerate() {
        let t = !truth.voiced(i);
        inter += (f && t) as usize;
        union += (f || t) as usize;
    }
    (inter, union)
}

#[test]
fn extracted_noise_spans_overlap_known_silences() {
    let p = cryda_core::synth::CryParams {
        expiration_dur: 0.6,
        gap_dur: 0.6,
        lead_dur: 0.5,
        ..Default::default()
    };
    for (i, snr) in [5.0, 10.0, 20.0].into_iter().enumerate() {
        for profile in [DomainProfile::hospital_a(), DomainProfile::hospital_b()] {
            let clean = synth_cry(&p, i as u64).unwrap();
            let clip = apply_domain(&clean, &profile, snr, 40 + i as u64).unwrap();
            let (inter, union) = noise_iou_counts(&clip);
            let iou = inter as f64 / union as f64;
            assert!(iou >= 0.8, "{} at {snr} dB: IoU {iou}", profile.id);
        }
    }
}

#[test]
fn extracted_noise_spans_overlap_silences_across_the_corpus() {
    let c = small_corpus(6);
    let (inter, union) = c
        .clips
        .iter()
        .map(|x| noise_iou_counts(&x.clip))
        .fold((0, 0), |(a, b), (i, u)| (a + i, b + u));
    let iou = inter as f64 / union as f64;
    assert!(iou >= 0.8, "pooled IoU {iou}");
}

fn row(i: usize) -> ManifestRow {
    ManifestRow {
        path: format!("audio/x/{i}.wav"),
        patient_id: format!("p{}", i / 5),
        label: if i % 2 == 0 { Label::Healthy } else { Label::Injury },
        domain: if i % 3 == 0 { TARGET.into() } else { SOURCE.into() },
        split: Split::ALL[i % 3],
    }
}

#[test]
fn manifest_roundtrip_preserves_rows_and_order() {
    let dir = tempfile::tempdir().unwrap();
    for n in [7, 10_000] {
        let m = CorpusManifest { rows: (0..n).map(row).collect() };
        let p = dir.path().join(format!("m{n}.csv"));
        m.write(&p).unwrap();
        assert_eq!(CorpusManifest::read(&p).unwrap(), m);
    }
}

#[test]
fn missing_manifest_column_is_named() {
    let text = "path,patient_id,label,split\na.wav,p1,healthy,train\n";
    match CorpusManifest::from_reader(text.as_bytes()) {
        Err(Error::MissingColumn(c)) => assert_eq!(c, "domain"),
        other => panic!("unexpected {other:?}"),
    }
}

/// Every tenth frame of the log-mel map of the default seed-0 cry. Regenerate
/// with `CRYDA_BLESS=1 cargo test -p cryda-core --test synth golden`.
#[test]
fn log_mel_of_seed_zero_cry_matches_golden_file() {
    use cryda_core::dsp::{log_mel, FeatureConfig};
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/log_mel_seed0.json");
    let clip = synth_cry(&cryda_core::synth::CryParams::default(), 0).unwrap();
    let f = log_mel(&clip, &FeatureConfig::default()).unwrap().frames;
    let (t, m) = (f.shape()[0], f.shape()[1]);
    let rows: Vec<Vec<f32>> = (0..t).step_by(10).map(|i| f.data()[i * m..(i + 1) * m].to_vec()).collect();
    if std::env::var_os("CRYDA_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let doc = serde_json::json!({ "frames": t, "n_mels": m, "stride": 10, "rows": rows });
        std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    }
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["frames"], t);
    assert_eq!(doc["n_mels"], m);
    let golden: Vec<Vec<f32>> = serde_json::from_value(doc["rows"].clone()).unwrap();
    assert_eq!(golden.len(), rows.len());
    for (g, r) in golden.iter().flatten().zip(rows.iter().flatten()) {
        assert!((g - r).abs() <= 1e-4 * g.abs().max(1.0), "{g} vs {r}");
    }
}
