//! Named configurations for the pre- and post-conversion experiments.

use std::path::PathBuf;

use biphoton_core::convchan::{
    calibrate_window_shape_from, conversion_efficiency, ConversionChannelSpec, ConverterSettings, WindowWidth,
};
use biphoton_core::correlator::BinningSpec;
use biphoton_core::model::{damped_oscillation_for, EmissionStatistics, SourceSettings};
use biphoton_core::purity::noise_rate_for_purity;
use biphoton_core::simkit::DetectorSpec;
use biphoton_core::spectrum::{amplitude_spectrum, SpectralDensity, SpectralGrid};

use crate::config::{ConversionConfig, DetectorsConfig, PipelineConfig, SourceConfig};
use crate::error::{CliError, CliResult};

pub const NAMES: [&str; 2] = ["fig2-source", "fig3-conversion"];

pub const PROBE_RATE_HZ: f64 = 8.9e5;
pub const TRIGGER_RATE_HZ: f64 = 1.4e6;
pub const PAIR_RATE_HZ: f64 = 7.3e5;
pub const PEAK_G2: f64 = 18.0;
pub const INTENSITY_FWHM_S: f64 = 20e-9;
pub const FIBER_DELAY_S: f64 = 100e-9;
pub const GROUP_DELAY_S: f64 = 55e-9;
pub const TRIGGER_PURITY: f64 = 0.89;
pub const SIGNAL_PURITY: f64 = 0.54;
pub const NARROWBAND_EFFICIENCY: f64 = 0.794;
pub const BROADBAND_EFFICIENCY: f64 = 0.55;

pub fn preset(name: &str) -> CliResult<PipelineConfig> {
    match name {
        "fig2-source" => fig2_source(),
        "fig3-conversion" => fig3_conversion(),
        other => Err(CliError::Usage(format!("unknown preset {other:?}; known: {}", NAMES.join(", ")))),
    }
}

/// Source alone; detector losses and dark counts are already removed from
/// the quoted rates.
pub fn fig2_source() -> CliResult<PipelineConfig> {
    let peak_density = (PEAK_G2 - 1.0) * TRIGGER_RATE_HZ * PROBE_RATE_HZ / PAIR_RATE_HZ;
    let waveform = damped_oscillation_for(INTENSITY_FWHM_S, peak_density)?;
    Ok(PipelineConfig {
        source: SourceConfig {
            waveform,
            pair_rate_hz: PAIR_RATE_HZ,
            trigger_rate_hz: TRIGGER_RATE_HZ,
            probe_rate_hz: PROBE_RATE_HZ,
            emission: EmissionStatistics::Thermal,
            settings: SourceSettings {
                optical_depth: 8.0,
                omega_1_gamma: 0.9,
                omega_2_gamma: 4.0,
                delta_1_gamma: -4.0,
                gamma_21_gamma: 0.001,
                gamma_hz: 2.0 * std::f64::consts::PI * 6e6,
            },
        },
        detectors: DetectorsConfig { trigger: DetectorSpec::ideal("trigger"), probe: DetectorSpec::ideal("probe") },
        fiber_delay_s: 0.0,
        conversion: None,
        duration_s: 30.0,
        duty_cycle: 1.0,
        chunk_s: 5.0,
        seed: 2,
        binning: BinningSpec { bin_width_s: 1e-9, tau_min_s: -100e-9, tau_max_s: 300e-9 },
        herald_window_s: 2e-9,
        herald_tau_s: None,
        output_dir: PathBuf::from("out/fig2-source"),
    })
}

/// Window calibrated so the fig2 spectrum converts at 55 %, the fiber and
/// converter delays, and noise set for the quoted channel purities.
pub fn fig3_conversion() -> CliResult<PipelineConfig> {
    let mut cfg = fig2_source()?;
    let model = cfg.source.model()?;
    let spectrum = SpectralDensity::Sampled(amplitude_spectrum(&model, SpectralGrid::for_model(&model))?);
    let base = ConversionChannelSpec {
        window_width: WindowWidth::Amplitude,
        group_delay_s: GROUP_DELAY_S,
        ..ConversionChannelSpec::default()
    };
    let mut channel = calibrate_window_shape_from(base, NARROWBAND_EFFICIENCY, BROADBAND_EFFICIENCY, &spectrum)?;
    let efficiency = conversion_efficiency(&channel, &spectrum)?;
    channel.added_noise_rate_hz = noise_rate_for_purity(PROBE_RATE_HZ * efficiency, SIGNAL_PURITY)?;
    cfg.detectors.trigger.dark_rate_hz = noise_rate_for_purity(TRIGGER_RATE_HZ, TRIGGER_PURITY)?;
    cfg.fiber_delay_s = FIBER_DELAY_S;
    cfg.conversion = Some(ConversionConfig {
        channel,
        converter: ConverterSettings {
            optical_depth: 110.0,
            omega_c_gamma: 20.0,
            omega_d_gamma: 12.0,
            delta_p_gamma: -4.0,
            delta_c_gamma: 8.0,
            delta_d_gamma: -5.0,
        },
        efficiency: None,
    });
    cfg.duration_s = 40.0;
    cfg.seed = 3;
    cfg.binning = BinningSpec { bin_width_s: 1e-9, tau_min_s: -100e-9, tau_max_s: 500e-9 };
    cfg.output_dir = PathBuf::from("out/fig3-conversion");
    Ok(cfg)
}
