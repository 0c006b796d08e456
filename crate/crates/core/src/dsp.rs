//! Short-term acoustic analysis: framing plus the nine per-frame feature
//! tracks (voiced/unvoiced indicators, effective speech segments, F0, log
//! energy, short-term energy, zero-crossing rate, SPL, MFCC).
//!
//! Everything here is a pure function of the input clip and configuration;
//! extraction across clips can run concurrently. The mel filterbank and DCT
//! basis are precomputed per configuration and shared read-only.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("clip too short: {n_samples} samples, frame needs {frame_len}")]
    ClipTooShort { n_samples: usize, frame_len: usize },
    #[error("invalid F0 band: [{f_min}, {f_max}] Hz at {sample_rate} Hz")]
    InvalidBand { f_min: f64, f_max: f64, sample_rate: u32 },
    #[error("invalid DSP config: {0}")]
    InvalidConfig(String),
}

/// Analysis window applied once per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hamming,
    Rectangular,
}

/// Windowed frames laid out row-major: `n_frames` rows of `frame_len`
/// samples, advancing by `hop`.
#[derive(Debug, Clone)]
pub struct FrameSeries {
    data: Vec<f64>,
    pub n_frames: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate_hz: u32,
    /// The window already applied to the stored frames.
    pub window: Window,
}

impl FrameSeries {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.frame_len..(i + 1) * self.frame_len]
    }
}

fn window_weights(window: Window, len: usize) -> Vec<f64> {
    match window {
        Window::Rectangular => vec![1.0; len],
        Window::Hamming => {
            if len == 1 {
                vec![1.0]
            } else {
                (0..len)
                    .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos())
                    .collect()
            }
        }
    }
}

/// Slice a clip into frames: `n_frames = floor((n - frame_len)/hop) + 1`.
/// Hamming weights are `0.54 - 0.46*cos(2*pi*n/(N-1))`.
pub fn frame_signal(
    clip: &AudioClip,
    frame_len: usize,
    hop: usize,
    window: Window,
) -> Result<FrameSeries, DspError> {
    let n = clip.samples.len();
    if n < frame_len || frame_len == 0 {
        return Err(DspError::ClipTooShort { n_samples: n, frame_len });
    }
    if hop == 0 {
        return Err(DspError::InvalidConfig("hop must be >= 1".into()));
    }

    let weights = window_weights(window, frame_len);
    let n_frames = (n - frame_len) / hop + 1;
    let mut data = Vec::with_capacity(n_frames * frame_len);
    for f in 0..n_frames {
        let start = f * hop;
        for i in 0..frame_len {
            data.push(clip.samples[start + i] * weights[i]);
        }
    }

    Ok(FrameSeries { data, n_frames, frame_len, hop, sample_rate_hz: clip.sample_rate_hz, window })
}

/// The four scalar per-frame tracks.
#[derive(Debug, Clone)]
pub struct BasicTracks {
    pub short_term_energy: Vec<f64>,
    pub log_energy: Vec<f64>,
    pub zcr: Vec<f64>,
    pub spl_db: Vec<f64>,
}

/// Per frame of length N:
/// STE = mean(x^2), logE = ln(STE + eps), ZCR = sign changes / (N-1),
/// SPL = 20*log10(RMS + eps) in dBFS (full scale = 1.0).
pub fn per_frame_basic(frames: &FrameSeries, eps: f64) -> BasicTracks {
    let n = frames.frame_len as f64;
    let mut ste = Vec::with_capacity(frames.n_frames);
    let mut log_e = Vec::with_capacity(frames.n_frames);
    let mut zcr = Vec::with_capacity(frames.n_frames);
    let mut spl = Vec::with_capacity(frames.n_frames);

    for f in 0..frames.n_frames {
        let x = frames.frame(f);
        let energy: f64 = x.iter().map(|&v| v * v).sum::<f64>() / n;
        ste.push(energy);
        log_e.push((energy + eps).ln());
        spl.push(20.0 * (energy.sqrt() + eps).log10());

        let crossings = x.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
        zcr.push(if x.len() > 1 { crossings as f64 / (x.len() - 1) as f64 } else { 0.0 });
    }

    BasicTracks { short_term_energy: ste, log_energy: log_e, zcr, spl_db: spl }
}

/// Fundamental-frequency estimate per frame, `None` where the normalized
/// autocorrelation peak stays below `peak_threshold` (unvoiced/noise).
///
/// Search runs over integer lags `[fs/f_max, fs/f_min]`; the winning lag is
/// refined by parabolic interpolation before conversion to Hz.
pub fn estimate_f0(
    frames: &FrameSeries,
    f_min: f64,
    f_max: f64,
    peak_threshold: f64,
) -> Result<Vec<Option<f64>>, DspError> {
    let fs = frames.sample_rate_hz as f64;
    if !(f_min > 0.0 && f_min < f_max && f_max < fs / 2.0) {
        return Err(DspError::InvalidBand { f_min, f_max, sample_rate: frames.sample_rate_hz });
    }

    let lag_min = (fs / f_max).ceil() as usize;
    let lag_max = ((fs / f_min).floor() as usize).min(frames.frame_len.saturating_sub(2));
    let mut out = Vec::with_capacity(frames.n_frames);

    // The analysis window tapers frame edges, which drags the correlation
    // peak toward shorter lags. Hamming weights are strictly positive, so
    // the raw frame is recovered exactly before autocorrelation.
    let weights = window_weights(frames.window, frames.frame_len);
    let mut raw = vec![0.0; frames.frame_len];

    for f in 0..frames.n_frames {
        let x = frames.frame(f);
        for i in 0..x.len() {
            raw[i] = x[i] / weights[i];
        }
        out.push(frame_f0(&raw, fs, lag_min, lag_max, f_min, f_max, peak_threshold));
    }
    Ok(out)
}

fn frame_f0(
    x: &[f64],
    fs: f64,
    lag_min: usize,
    lag_max: usize,
    f_min: f64,
    f_max: f64,
    peak_threshold: f64,
) -> Option<f64> {
    let n = x.len();
    if lag_min == 0 || lag_min > lag_max {
        return None;
    }

    // prefix sums of x^2 give O(1) window energies for the normalization
    let mut sq = Vec::with_capacity(n + 1);
    sq.push(0.0);
    for &v in x {
        sq.push(sq.last().unwrap() + v * v);
    }
    let total = sq[n];
    if total <= 0.0 {
        return None;
    }

    let norm_r = |tau: usize| -> f64 {
        let m = n - tau;
        let mut r = 0.0;
        for i in 0..m {
            r += x[i] * x[i + tau];
        }
        let e1 = sq[m];
        let e2 = total - sq[tau];
        let denom = (e1 * e2).sqrt();
        if denom > 0.0 {
            r / denom
        } else {
            0.0
        }
    };

    let mut best_tau = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut vals = vec![0.0; lag_max + 2];
    for tau in lag_min..=lag_max {
        let v = norm_r(tau);
        vals[tau] = v;
        if v > best_val {
            best_val = v;
            best_tau = tau;
        }
    }
    if best_val < peak_threshold {
        return None;
    }

    // A periodic signal correlates equally well at every multiple of its
    // period; the fundamental is the shortest of those lags. Prefer the
    // earliest local maximum within 1% of the global peak.
    for tau in lag_min..best_tau {
        let is_peak = vals[tau] >= vals[tau.saturating_sub(1).max(lag_min)]
            && vals[tau] >= vals[(tau + 1).min(lag_max)];
        if is_peak && vals[tau] >= 0.99 * best_val {
            best_tau = tau;
            break;
        }
    }

    // parabolic refinement around the integer peak
    let mut lag = best_tau as f64;
    if best_tau > lag_min && best_tau < lag_max {
        let (ym, y0, yp) = (vals[best_tau - 1], vals[best_tau], vals[best_tau + 1]);
        let denom = ym - 2.0 * y0 + yp;
        if denom.abs() > 1e-12 {
            let delta = 0.5 * (ym - yp) / denom;
            if delta.abs() <= 0.5 {
                lag += delta;
            }
        }
    }

    Some((fs / lag).clamp(f_min, f_max))
}

/// Thresholds for the energy/periodicity voicing rules.
#[derive(Debug, Clone, Copy)]
pub struct VoicingThresholds {
    /// Frames below this STE are silence.
    pub t_low: f64,
    /// A run must touch this STE somewhere to count as speech.
    pub t_high: f64,
    /// Voiced frames must stay under this ZCR.
    pub t_zcr: f64,
    /// Minimum run length (frames) for an effective segment.
    pub min_run: usize,
}

/// Voiced/unvoiced indicator tracks plus effective-segment lengths.
#[derive(Debug, Clone)]
pub struct VoicingTracks {
    /// 1.0 on voiced frames, else 0.0.
    pub voiced: Vec<f64>,
    /// 1.0 on speech-active frames without periodicity, else 0.0.
    pub unvoiced: Vec<f64>,
    /// Lengths (in frames) of speech-active runs of at least `min_run`.
    pub effective_segments: Vec<f64>,
    /// 1.0 on speech-active frames (voiced or unvoiced), else 0.0.
    pub active: Vec<f64>,
}

/// Double-threshold endpoint detection with hysteresis: a frame is
/// speech-active if it sits in a maximal run of STE >= t_low that reaches
/// t_high somewhere. Active frames split into voiced (F0 present and
/// ZCR < t_zcr) and unvoiced; silence frames are neither.
pub fn classify_voicing(
    ste: &[f64],
    zcr: &[f64],
    f0: &[Option<f64>],
    thr: &VoicingThresholds,
) -> VoicingTracks {
    let n = ste.len();
    debug_assert!(zcr.len() == n && f0.len() == n);

    let mut active = vec![0.0; n];
    let mut segments = Vec::new();
    let mut i = 0;
    while i < n {
        if ste[i] >= thr.t_low {
            let start = i;
            let mut hit_high = false;
            while i < n && ste[i] >= thr.t_low {
                hit_high |= ste[i] >= thr.t_high;
                i += 1;
            }
            if hit_high {
                for a in active.iter_mut().take(i).skip(start) {
                    *a = 1.0;
                }
                let len = i - start;
                if len >= thr.min_run {
                    segments.push(len as f64);
                }
            }
        } else {
            i += 1;
        }
    }

    let mut voiced = vec![0.0; n];
    let mut unvoiced = vec![0.0; n];
    for i in 0..n {
        if active[i] == 1.0 {
            if f0[i].is_some() && zcr[i] < thr.t_zcr {
                voiced[i] = 1.0;
            } else {
                unvoiced[i] = 1.0;
            }
        }
    }

    VoicingTracks { voiced, unvoiced, effective_segments: segments, active }
}

// ---------------------------------------------------------------------------
// Spectrum, mel filterbank, MFCC
// ---------------------------------------------------------------------------

/// In-place iterative radix-2 FFT (decimation in time).
fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && im.len() == n);

    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut start = 0;
        while start < n {
            let (mut cr, mut ci) = (1.0f64, 0.0f64);
            for k in 0..len / 2 {
                let (ur, ui) = (re[start + k], im[start + k]);
                let (sr, si) = (re[start + k + len / 2], im[start + k + len / 2]);
                let (vr, vi) = (sr * cr - si * ci, sr * ci + si * cr);
                re[start + k] = ur + vr;
                im[start + k] = ui + vi;
                re[start + k + len / 2] = ur - vr;
                im[start + k + len / 2] = ui - vi;
                let next = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = next;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// Power spectrum `|X[k]|^2 / n_fft` for bins `0..=n_fft/2`. The frame is
/// zero-padded to `n_fft`; a radix-2 FFT is used when `n_fft` is a power of
/// two, otherwise a direct DFT.
pub fn power_spectrum(frame: &[f64], n_fft: usize) -> Vec<f64> {
    let half = n_fft / 2;
    if n_fft.is_power_of_two() {
        let mut re = vec![0.0; n_fft];
        let mut im = vec![0.0; n_fft];
        re[..frame.len().min(n_fft)].copy_from_slice(&frame[..frame.len().min(n_fft)]);
        fft_in_place(&mut re, &mut im);
        (0..=half).map(|k| (re[k] * re[k] + im[k] * im[k]) / n_fft as f64).collect()
    } else {
        (0..=half)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &s) in frame.iter().take(n_fft).enumerate() {
                    let ang = -2.0 * PI * k as f64 * i as f64 / n_fft as f64;
                    re += s * ang.cos();
                    im += s * ang.sin();
                }
                (re * re + im * im) / n_fft as f64
            })
            .collect()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank: `n_filters` unit-peak triangles with corners
/// equally spaced on the mel scale over `[0, fs/2]`, evaluated at FFT bin
/// frequencies.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_filters` rows of `n_fft/2 + 1` weights.
    pub weights: Vec<Vec<f64>>,
    pub center_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_filters: usize, n_fft: usize, sample_rate_hz: u32) -> MelFilterbank {
        let n_bins = n_fft / 2 + 1;
        let fs = sample_rate_hz as f64;
        let mel_max = hz_to_mel(fs / 2.0);
        let hz_points: Vec<f64> = (0..n_filters + 2)
            .map(|j| mel_to_hz(mel_max * j as f64 / (n_filters + 1) as f64))
            .collect();

        let mut weights = Vec::with_capacity(n_filters);
        for m in 1..=n_filters {
            let (lo, mid, hi) = (hz_points[m - 1], hz_points[m], hz_points[m + 1]);
            let mut row = vec![0.0; n_bins];
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * fs / n_fft as f64;
                if f > lo && f < mid {
                    *w = (f - lo) / (mid - lo);
                } else if (f - mid).abs() < 1e-12 {
                    *w = 1.0;
                } else if f > mid && f < hi {
                    *w = (hi - f) / (hi - mid);
                }
            }
            weights.push(row);
        }

        MelFilterbank { weights, center_hz: hz_points[1..=n_filters].to_vec() }
    }

    /// Filter energies for one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|row| row.iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Orthonormal DCT-II basis: `n_coeffs` rows over `n_filters` points.
fn dct_basis(n_coeffs: usize, n_filters: usize) -> Vec<Vec<f64>> {
    let m = n_filters as f64;
    (0..n_coeffs)
        .map(|k| {
            let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            (0..n_filters)
                .map(|n| scale * (PI * k as f64 * (n as f64 + 0.5) / m).cos())
                .collect()
        })
        .collect()
}

/// MFCC matrix (`n_frames` rows, `n_coeffs` columns): power spectrum ->
/// mel filterbank -> `ln(energy + eps)` -> orthonormal DCT-II, keeping
/// coefficients `0..n_coeffs`.
pub fn compute_mfcc(
    frames: &FrameSeries,
    n_fft: usize,
    n_filters: usize,
    n_coeffs: usize,
    eps: f64,
) -> Result<Vec<Vec<f64>>, DspError> {
    if n_coeffs > n_filters {
        return Err(DspError::InvalidConfig(format!(
            "n_coeffs {n_coeffs} exceeds n_filters {n_filters}"
        )));
    }
    if n_fft < frames.frame_len {
        return Err(DspError::InvalidConfig(format!(
            "n_fft {n_fft} smaller than frame length {}",
            frames.frame_len
        )));
    }

    let bank = MelFilterbank::new(n_filters, n_fft, frames.sample_rate_hz);
    let dct = dct_basis(n_coeffs, n_filters);

    let mut out = Vec::with_capacity(frames.n_frames);
    for f in 0..frames.n_frames {
        let power = power_spectrum(frames.frame(f), n_fft);
        let log_e: Vec<f64> = bank.apply(&power).iter().map(|&e| (e + eps).ln()).collect();
        let coeffs: Vec<f64> = dct
            .iter()
            .map(|row| row.iter().zip(&log_e).map(|(c, e)| c * e).sum())
            .collect();
        out.push(coeffs);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Full extraction
// ---------------------------------------------------------------------------

/// Framing, F0, MFCC, and voicing parameters for track extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    /// Canonical sample rate clips are prepared to before analysis.
    pub target_sample_rate_hz: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub window: Window,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    /// Normalized-autocorrelation peak needed to call a frame periodic.
    pub f0_peak_threshold: f64,
    pub n_fft: usize,
    pub n_mel_filters: usize,
    pub n_mfcc: usize,
    /// Floor added inside every logarithm.
    pub log_eps: f64,
    /// Voiced frames must have ZCR below this.
    pub zcr_voicing_max: f64,
    /// T_low = energy_low_ratio * mean STE of the clip.
    pub energy_low_ratio: f64,
    /// T_high = energy_high_mult * T_low.
    pub energy_high_mult: f64,
    pub min_segment_frames: usize,
}

impl Default for DspConfig {
    fn default() -> DspConfig {
        DspConfig {
            target_sample_rate_hz: 16000,
            frame_ms: 25.0,
            hop_ms: 10.0,
            window: Window::Hamming,
            f0_min_hz: 70.0,
            f0_max_hz: 500.0,
            f0_peak_threshold: 0.45,
            n_fft: 512,
            n_mel_filters: 26,
            n_mfcc: 13,
            log_eps: 1e-10,
            zcr_voicing_max: 0.3,
            energy_low_ratio: 0.05,
            energy_high_mult: 3.0,
            min_segment_frames: 3,
        }
    }
}

impl DspConfig {
    pub fn frame_len(&self, sample_rate_hz: u32) -> usize {
        ((self.frame_ms / 1000.0) * sample_rate_hz as f64).round() as usize
    }

    pub fn hop(&self, sample_rate_hz: u32) -> usize {
        (((self.hop_ms / 1000.0) * sample_rate_hz as f64).round() as usize).max(1)
    }
}

/// All nine per-frame/per-segment tracks for one clip, computed from a
/// single shared [`FrameSeries`].
#[derive(Debug, Clone)]
pub struct FeatureTrackSet {
    pub n_frames: usize,
    pub voiced: Vec<f64>,
    pub unvoiced: Vec<f64>,
    pub effective_segments: Vec<f64>,
    /// Per-frame estimate; `None` on frames without detected periodicity.
    pub f0_hz: Vec<Option<f64>>,
    pub log_energy: Vec<f64>,
    pub short_term_energy: Vec<f64>,
    pub zcr: Vec<f64>,
    pub spl_db: Vec<f64>,
    /// `n_frames` rows of `n_mfcc` coefficients.
    pub mfcc: Vec<Vec<f64>>,
}

impl FeatureTrackSet {
    /// F0 values on frames where an estimate exists.
    pub fn f0_values(&self) -> Vec<f64> {
        self.f0_hz.iter().filter_map(|v| *v).collect()
    }
}

/// Run the whole short-term analysis for one prepared clip. Deterministic
/// for a fixed config.
pub fn extract_tracks(clip: &AudioClip, cfg: &DspConfig) -> Result<FeatureTrackSet, DspError> {
    let frame_len = cfg.frame_len(clip.sample_rate_hz);
    let hop = cfg.hop(clip.sample_rate_hz);

    let frames = frame_signal(clip, frame_len, hop, cfg.window)?;
    let basic = per_frame_basic(&frames, cfg.log_eps);
    let f0 = estimate_f0(&frames, cfg.f0_min_hz, cfg.f0_max_hz, cfg.f0_peak_threshold)?;
    let mfcc = compute_mfcc(&frames, cfg.n_fft, cfg.n_mel_filters, cfg.n_mfcc, cfg.log_eps)?;

    let mean_ste =
        basic.short_term_energy.iter().sum::<f64>() / basic.short_term_energy.len() as f64;
    // Digital silence has zero mean energy; no frame may count as speech.
    let t_low = if mean_ste > 0.0 { cfg.energy_low_ratio * mean_ste } else { f64::INFINITY };
    let thr = VoicingThresholds {
        t_low,
        t_high: cfg.energy_high_mult * t_low,
        t_zcr: cfg.zcr_voicing_max,
        min_run: cfg.min_segment_frames,
    };
    let voicing = classify_voicing(&basic.short_term_energy, &basic.zcr, &f0, &thr);

    Ok(FeatureTrackSet {
        n_frames: frames.n_frames,
        voiced: voicing.voiced,
        unvoiced: voicing.unvoiced,
        effective_segments: voicing.effective_segments,
        f0_hz: f0,
        log_energy: basic.log_energy,
        short_term_energy: basic.short_term_energy,
        zcr: basic.zcr,
        spl_db: basic.spl_db,
        mfcc,
    })
}
