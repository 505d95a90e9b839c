//! Floating-point operation counts of the enhancement pipelines.

use crate::frame::FRAME_RATE;
use crate::nn::{LayerKind, ModelSpec};

/// Real split-radix FFT cost of one 256-point transform.
pub const FFT_256_FLOPS: f64 = 3078.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineKind {
    /// Network on vocoder parameters.
    Parameter,
    /// Network on spectra plus a forward and an inverse FFT per frame.
    Irm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsBreakdown {
    /// Per layer: label and FLOPs per frame.
    pub layers: Vec<(String, f64)>,
    pub fft_per_frame: f64,
    pub frames_per_second: f64,
    pub total_mflops: f64,
}

impl FlopsBreakdown {
    pub fn per_frame(&self) -> f64 {
        self.layers.iter().map(|(_, f)| f).sum::<f64>() + self.fft_per_frame
    }
}

/// Two FLOPs per weight (multiply and add); biases and activations are not counted.
pub fn count_flops(spec: &ModelSpec, kind: PipelineKind) -> FlopsBreakdown {
    let layers = spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (r, c) = l.weight_shape();
            let name = match l.kind {
                LayerKind::Gru => "gru",
                LayerKind::FeedForward => "ff",
                LayerKind::LinearOut => "out",
            };
            (format!("{i}:{name} {}→{}", l.input_dim, l.output_dim), 2.0 * (r * c) as f64)
        })
        .collect();
    let fft_per_frame = match kind {
        PipelineKind::Parameter => 0.0,
        PipelineKind::Irm => 2.0 * FFT_256_FLOPS,
    };
    let mut b = FlopsBreakdown { layers, fft_per_frame, frames_per_second: FRAME_RATE, total_mflops: 0.0 };
    b.total_mflops = b.per_frame() * FRAME_RATE / 1e6;
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(name: &str, kind: PipelineKind) -> f64 {
        count_flops(&ModelSpec::preset(name).unwrap(), kind).total_mflops
    }

    #[test]
    fn small_systems_match_reported_totals() {
        let param = total("param_small", PipelineKind::Parameter);
        let irm = total("irm_small", PipelineKind::Irm);
        assert!((param / 4.11 - 1.0).abs() < 0.05, "{param}");
        assert!((irm / 5.06 - 1.0).abs() < 0.05, "{irm}");
        assert!(irm > param);
    }

    #[test]
    fn fft_share() {
        let b = count_flops(&ModelSpec::preset("irm_small").unwrap(), PipelineKind::Irm);
        let fft = b.fft_per_frame * b.frames_per_second / 1e6;
        assert!((fft - 0.2736).abs() < 1e-3, "{fft}");
        let expected = (b.layers.iter().map(|l| l.1).sum::<f64>() + 6156.0) * 8000.0 / 180.0 / 1e6;
        assert!((b.total_mflops - expected).abs() < 1e-12);
    }

    #[test]
    fn weights_only() {
        let b = count_flops(&ModelSpec::preset("param_small").unwrap(), PipelineKind::Parameter);
        assert_eq!(b.layers[0].1, 2.0 * 3.0 * 93.0 * 64.0);
        assert_eq!(b.per_frame(), 2.0 * 46_144.0);
    }
}
