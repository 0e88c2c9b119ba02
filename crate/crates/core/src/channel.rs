//! Outdated-CSI fading model.
//!
//! The instantaneous gain is h = ρĥ + √(1−ρ²)e with ĥ, e ~ CN(0,1), so the
//! instantaneous SNR γ = γ̄|h|² given the outdated SNR γ̂ = γ̄|ĥ|² follows a
//! scaled noncentral χ² law with two degrees of freedom.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fbl::SnrValue;
use crate::special::{bessel_i0_scaled, bessel_j0};

/// Which hop of the relay a link model describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkIndex {
    /// Source to relay.
    Backhaul,
    /// Relay to destination.
    Relaying,
}

/// Statistics of one hop: average SNR γ̄ and outdated-CSI correlation ρ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    avg_snr: f64,
    rho: f64,
    /// Kept alongside ρ so that a ρ² given by the caller is returned exactly.
    rho_sq: f64,
    index: LinkIndex,
}

impl LinkModel {
    pub fn new(avg_snr: f64, rho: f64, index: LinkIndex) -> Result<Self> {
        if !(avg_snr > 0.0 && avg_snr.is_finite()) {
            return Err(Error::config(format!(
                "average SNR must be positive, got {avg_snr}"
            )));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::config(format!(
                "correlation coefficient must lie in [0, 1), got {rho}"
            )));
        }
        Ok(LinkModel {
            avg_snr,
            rho,
            rho_sq: rho * rho,
            index,
        })
    }

    /// Builds the model from ρ² rather than ρ.
    pub fn from_rho_sq(avg_snr: f64, rho_sq: f64, index: LinkIndex) -> Result<Self> {
        if !(0.0..1.0).contains(&rho_sq) {
            return Err(Error::config(format!(
                "rho^2 must lie in [0, 1), got {rho_sq}"
            )));
        }
        let mut link = Self::new(avg_snr, rho_sq.sqrt(), index)?;
        link.rho_sq = rho_sq;
        Ok(link)
    }

    pub fn avg_snr(&self) -> f64 {
        self.avg_snr
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn rho_sq(&self) -> f64 {
        self.rho_sq
    }

    pub fn index(&self) -> LinkIndex {
        self.index
    }

    /// γ̄(1 − ρ²), the scale of the innovation term.
    pub fn innovation_scale(&self) -> f64 {
        self.avg_snr * (1.0 - self.rho_sq())
    }

    pub fn with_avg_snr(&self, avg_snr: f64) -> Result<Self> {
        Ok(LinkModel {
            avg_snr: Self::new(avg_snr, self.rho, self.index)?.avg_snr,
            ..*self
        })
    }
}

/// The backhaul/relaying pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayLinks {
    pub backhaul: LinkModel,
    pub relaying: LinkModel,
}

impl RelayLinks {
    /// Enforces ρ₁² ≥ ρ₂²: relaying CSI is always the more delayed sample.
    pub fn new(backhaul: LinkModel, relaying: LinkModel) -> Result<Self> {
        if backhaul.rho_sq() < relaying.rho_sq() {
            return Err(Error::config(format!(
                "backhaul correlation rho1^2 = {} is below relaying rho2^2 = {}",
                backhaul.rho_sq(),
                relaying.rho_sq()
            )));
        }
        Ok(Self::new_unordered(backhaul, relaying))
    }

    /// Skips the ρ₁² ≥ ρ₂² ordering check.
    pub fn new_unordered(mut backhaul: LinkModel, mut relaying: LinkModel) -> Self {
        backhaul.index = LinkIndex::Backhaul;
        relaying.index = LinkIndex::Relaying;
        RelayLinks { backhaul, relaying }
    }

    pub fn get(&self, index: LinkIndex) -> &LinkModel {
        match index {
            LinkIndex::Backhaul => &self.backhaul,
            LinkIndex::Relaying => &self.relaying,
        }
    }

    pub fn both(&self) -> [&LinkModel; 2] {
        [&self.backhaul, &self.relaying]
    }

    /// Swaps the hop roles (parameters travel with their labels).
    pub fn swapped(&self) -> Self {
        Self::new_unordered(self.relaying, self.backhaul)
    }
}

/// Outdated SNRs visible to the source at scheduling time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameCsi {
    pub gamma_hat_1: SnrValue,
    pub gamma_hat_2: SnrValue,
}

impl FrameCsi {
    pub fn new(gamma_hat_1: f64, gamma_hat_2: f64) -> Result<Self> {
        Ok(FrameCsi {
            gamma_hat_1: SnrValue::new(gamma_hat_1)?,
            gamma_hat_2: SnrValue::new(gamma_hat_2)?,
        })
    }

    pub fn get(&self, index: LinkIndex) -> SnrValue {
        match index {
            LinkIndex::Backhaul => self.gamma_hat_1,
            LinkIndex::Relaying => self.gamma_hat_2,
        }
    }

    pub fn swapped(&self) -> Self {
        FrameCsi {
            gamma_hat_1: self.gamma_hat_2,
            gamma_hat_2: self.gamma_hat_1,
        }
    }
}

/// One correlated draw for a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization {
    pub gamma_hat: SnrValue,
    pub gamma: SnrValue,
    /// Outdated complex gain ĥ as (re, im).
    pub outdated_gain: (f64, f64),
    /// Innovation e as (re, im).
    pub innovation: (f64, f64),
}

/// Frame timing and Doppler used to derive the correlation coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopplerGeometry {
    /// Initialization length n in symbols.
    pub init_length: f64,
    /// Per-hop blocklength m in symbols.
    pub blocklength: f64,
    /// Normalized Doppler of the S–R link, cycles per symbol.
    pub doppler_sr: f64,
    /// Normalized Doppler of the R–D link, cycles per symbol.
    pub doppler_rd: f64,
}

/// ρ₁ = J₀(2π f_SR n), ρ₂ = J₀(2π f_RD (n + m)).
pub fn rho_from_doppler(geom: &DopplerGeometry) -> Result<(f64, f64)> {
    let DopplerGeometry {
        init_length: n,
        blocklength: m,
        doppler_sr,
        doppler_rd,
    } = *geom;
    if !(m > 0.0 && n > m) {
        return Err(Error::config(format!(
            "frame timing requires n > m > 0, got n = {n}, m = {m}"
        )));
    }
    if !(doppler_sr >= 0.0 && doppler_rd >= 0.0) {
        return Err(Error::config("Doppler frequencies must be non-negative"));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let rho_1 = bessel_j0(two_pi * doppler_sr * n);
    let rho_2 = bessel_j0(two_pi * doppler_rd * (n + m));
    for (name, rho) in [("rho1", rho_1), ("rho2", rho_2)] {
        if rho <= 0.0 {
            return Err(Error::config(format!(
                "{name} = {rho:.6} is not positive; the correlation model does not apply"
            )));
        }
        if rho >= 1.0 {
            return Err(Error::config(format!(
                "{name} = 1 (static channel); outdated-CSI model needs rho < 1"
            )));
        }
    }
    Ok((rho_1, rho_2))
}

/// Density of the instantaneous SNR given the outdated SNR.
///
/// The exponential and the Bessel factor are combined as
/// exp(−(√γ − ρ√γ̂)²/s)·e^{−x}I₀(x)/s with s = γ̄(1−ρ²), x = 2ρ√(γγ̂)/s,
/// which cannot overflow.
pub fn conditional_pdf(gamma: SnrValue, gamma_hat: SnrValue, link: &LinkModel) -> f64 {
    let s = link.innovation_scale();
    conditional_pdf_raw(gamma.linear(), gamma_hat.linear().sqrt(), link.rho, s)
}

#[inline]
pub(crate) fn conditional_pdf_raw(gamma: f64, sqrt_gamma_hat: f64, rho: f64, scale: f64) -> f64 {
    let root = gamma.sqrt();
    let gap = root - rho * sqrt_gamma_hat;
    let x = 2.0 * rho * root * sqrt_gamma_hat / scale;
    (-gap * gap / scale).exp() * bessel_i0_scaled(x) / scale
}

/// Draws (γ̂, γ) for one link from the correlated Rayleigh model.
pub fn sample_pair<R: Rng + ?Sized>(link: &LinkModel, rng: &mut R) -> ChannelRealization {
    let outdated = complex_normal(rng);
    let innovation = complex_normal(rng);
    let rho = link.rho;
    let spread = (1.0 - rho * rho).sqrt();
    let h = (
        rho * outdated.0 + spread * innovation.0,
        rho * outdated.1 + spread * innovation.1,
    );
    let gain_hat = outdated.0 * outdated.0 + outdated.1 * outdated.1;
    let gain = h.0 * h.0 + h.1 * h.1;
    ChannelRealization {
        gamma_hat: SnrValue::new_unchecked(link.avg_snr * gain_hat),
        gamma: SnrValue::new_unchecked(link.avg_snr * gain),
        outdated_gain: outdated,
        innovation,
    }
}

/// Draws γ given a fixed outdated SNR (the phase of ĥ is irrelevant).
pub fn sample_conditional<R: Rng + ?Sized>(
    gamma_hat: SnrValue,
    link: &LinkModel,
    rng: &mut R,
) -> SnrValue {
    let e = complex_normal(rng);
    let rho = link.rho;
    let spread = (1.0 - rho * rho).sqrt();
    let h_hat = (gamma_hat.linear() / link.avg_snr).sqrt();
    let re = rho * h_hat + spread * e.0;
    let im = spread * e.1;
    SnrValue::new_unchecked(link.avg_snr * (re * re + im * im))
}

/// CN(0, 1): independent real and imaginary parts of variance 1/2.
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    (
        re * std::f64::consts::FRAC_1_SQRT_2,
        im * std::f64::consts::FRAC_1_SQRT_2,
    )
}

/// Median of γ given γ̂, approximated as ρ²γ̂.
pub fn median_snr(gamma_hat: SnrValue, link: &LinkModel) -> SnrValue {
    SnrValue::new_unchecked(link.rho_sq() * gamma_hat.linear())
}

/// Base-station antenna height assumed by [`path_loss_snr`].
pub const BASE_ANTENNA_HEIGHT_M: f64 = 30.0;
/// Mobile antenna height assumed by [`path_loss_snr`].
pub const MOBILE_ANTENNA_HEIGHT_M: f64 = 1.5;

/// COST-231 Hata urban path loss in dB (medium-sized city, C_m = 0 dB).
/// Distances below 1 km extrapolate the log-distance law.
pub fn cost231_hata_path_loss_db(distance_m: f64, freq_hz: f64) -> Result<f64> {
    if !(distance_m > 0.0 && distance_m.is_finite()) {
        return Err(Error::domain(format!(
            "distance must be positive, got {distance_m}"
        )));
    }
    let f_mhz = freq_hz / 1e6;
    if !(150.0..=2000.0 + 1e-9).contains(&f_mhz) {
        return Err(Error::domain(format!(
            "COST-231 Hata is defined for 150-2000 MHz, got {f_mhz} MHz"
        )));
    }
    let lf = f_mhz.log10();
    let hb = BASE_ANTENNA_HEIGHT_M;
    let hm = MOBILE_ANTENNA_HEIGHT_M;
    let mobile_correction = (1.1 * lf - 0.7) * hm - (1.56 * lf - 0.8);
    Ok(46.3 + 33.9 * lf - 13.82 * hb.log10() - mobile_correction
        + (44.9 - 6.55 * hb.log10()) * (distance_m / 1000.0).log10())
}

/// Average link SNR (linear) from transmit power, path loss and noise power.
pub fn path_loss_snr(
    distance_m: f64,
    freq_hz: f64,
    tx_power_dbm: f64,
    noise_dbm: f64,
) -> Result<f64> {
    let loss = cost231_hata_path_loss_db(distance_m, freq_hz)?;
    Ok(10f64.powf((tx_power_dbm - loss - noise_dbm) / 10.0))
}
