//! Log-mel filterbank features of a synthetic two-tone signal, followed by
//! per-speaker mean and variance normalization.
//!
//! `cargo run --example log_mel_features -- [tone_hz]`

use std::f64::consts::PI;

use subword_asr::features::{accumulate_and_normalize, compute_fbank, mel_centers, FbankConfig, Utterance};

fn main() -> subword_asr::Result<()> {
    let tone = std::env::args().nth(1).map_or(1000.0, |s| s.parse().expect("tone_hz"));
    let config = FbankConfig::default();
    let pcm: Vec<f64> = (0..16_000)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            let f = if i < 8000 { tone } else { 2.5 * tone };
            0.5 * (2.0 * PI * f * t).sin()
        })
        .collect();
    let fbank = compute_fbank(&pcm, &config)?;
    println!("{} samples -> {} frames x {} filters", pcm.len(), fbank.rows(), fbank.cols());

    let centers = mel_centers(&config);
    for t in [10, fbank.rows() - 10] {
        let row = fbank.row_slice(t);
        let peak = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        println!("frame {t:>3}: strongest filter {peak} centred at {:.0} Hz", centers[peak]);
    }

    let utt = |id: &str| Utterance {
        id: id.into(),
        speaker_id: "spk".into(),
        features: fbank.clone(),
        transcript: String::new(),
    };
    let (normed, stats) = accumulate_and_normalize(vec![utt("a"), utt("b")])?;
    let col0: Vec<f64> = (0..normed[0].features.rows()).map(|t| normed[0].features.get(t, 0)).collect();
    let mean = col0.iter().sum::<f64>() / col0.len() as f64;
    println!("speaker frames {}, filter 0 mean after normalization {mean:.2e}", stats["spk"].frames);
    Ok(())
}
