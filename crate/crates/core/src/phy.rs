//! PHY tables and the deterministic link model.

use core::fmt;

use thiserror::Error;

use crate::engine::SimTime;

/// Shortest distance used by the propagation model.
pub const MIN_DISTANCE_M: f64 = 0.1;

/// Bytes of synchronization header plus PHY header in front of every frame.
pub const DEFAULT_PHY_OVERHEAD: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PhyError {
    #[error("channel {0} is outside 11..=26")]
    ChannelOutOfRange(u8),
    #[error("beacon order 15 disables beacons and has no interval")]
    NonBeaconMode,
    #[error("beacon order {0} is outside 0..=15")]
    BeaconOrderOutOfRange(u8),
}

/// ISM band of operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Band {
    B2400,
    B915,
    B868,
}

impl Band {
    pub const fn data_rate_kbps(self) -> u32 {
        match self {
            Band::B2400 => 250,
            Band::B915 => 40,
            Band::B868 => 20,
        }
    }

    pub const fn channel_count(self) -> u8 {
        match self {
            Band::B2400 => 16,
            Band::B915 => 10,
            Band::B868 => 1,
        }
    }

    /// Channel spacing in MHz. The 868 MHz band has a single channel.
    pub const fn channel_spacing_mhz(self) -> u32 {
        match self {
            Band::B2400 => 5,
            Band::B915 => 2,
            Band::B868 => 0,
        }
    }

    /// Superframe base duration (960 symbols) in microseconds.
    pub const fn base_superframe_us(self) -> u64 {
        match self {
            Band::B2400 => 15_360,
            Band::B915 => 24_000,
            Band::B868 => 48_000,
        }
    }

    /// Duration of one symbol in microseconds.
    pub const fn symbol_us(self) -> u64 {
        self.base_superframe_us() / 960
    }

    pub fn parse(s: &str) -> Option<Band> {
        match s {
            "2400" | "2.4GHz" | "B2400" => Some(Band::B2400),
            "915" | "B915" => Some(Band::B915),
            "868" | "B868" => Some(Band::B868),
            _ => None,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Band::B2400 => "2400",
            Band::B915 => "915",
            Band::B868 => "868",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Beacon order; 15 means a non-beacon network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BeaconOrder(u8);

impl BeaconOrder {
    pub const NON_BEACON: BeaconOrder = BeaconOrder(15);

    pub fn new(bo: u8) -> Result<Self, PhyError> {
        if bo <= 15 {
            Ok(BeaconOrder(bo))
        } else {
            Err(PhyError::BeaconOrderOutOfRange(bo))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn beacons_enabled(self) -> bool {
        self.0 < 15
    }
}

/// Center frequency of a 2.4 GHz channel: `2350 + 5 * ch` MHz.
pub fn channel_center_frequency(ch: u8) -> Result<u32, PhyError> {
    if !(11..=26).contains(&ch) {
        return Err(PhyError::ChannelOutOfRange(ch));
    }
    Ok(2350 + 5 * u32::from(ch))
}

/// `base(band) * 2^bo`, exact in microseconds.
pub fn beacon_interval(bo: BeaconOrder, band: Band) -> Result<SimTime, PhyError> {
    if !bo.beacons_enabled() {
        return Err(PhyError::NonBeaconMode);
    }
    Ok(SimTime::from_micros(band.base_superframe_us() << bo.0))
}

/// Time on air of `frame_bytes` (PHY overhead included), rounded up to whole
/// microseconds.
pub fn frame_airtime(frame_bytes: u32, band: Band) -> SimTime {
    let bits_times_1000 = u64::from(frame_bytes) * 8 * 1000;
    let rate = u64::from(band.data_rate_kbps());
    SimTime::from_micros(bits_times_1000.div_ceil(rate))
}

/// Radio and propagation constants shared by a network.
#[derive(Debug, Clone, PartialEq)]
pub struct PhyParams {
    pub band: Band,
    pub channel: u8,
    /// Default transmit power for stationary nodes, dBm.
    pub tx_power: f64,
    /// Discrete transmit power levels available to every node, dBm, ascending.
    pub levels: alloc::vec::Vec<f64>,
    pub antenna_gain: f64,
    pub rx_sensitivity: f64,
    /// Path loss at 1 m, dB.
    pub pl0: f64,
    pub path_loss_exponent: f64,
    pub phy_overhead: u32,
    /// Margin above sensitivity at which LQ saturates at 255, dB.
    pub lq_saturation_margin: f64,
}

impl Default for PhyParams {
    fn default() -> Self {
        PhyParams {
            band: Band::B2400,
            channel: 15,
            tx_power: 4.0,
            levels: alloc::vec![0.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            antenna_gain: 0.0,
            rx_sensitivity: -85.0,
            pl0: 66.0,
            path_loss_exponent: 3.5,
            phy_overhead: DEFAULT_PHY_OVERHEAD,
            lq_saturation_margin: 40.0,
        }
    }
}

impl PhyParams {
    pub fn max_level(&self) -> f64 {
        self.levels.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_level(&self) -> f64 {
        self.levels.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn has_level(&self, p: f64) -> bool {
        self.levels.iter().any(|&l| l == p)
    }

    /// Distance at which a link at `power` (plus both antenna gains) sits
    /// exactly at sensitivity.
    pub fn range_m(&self, power: f64, gain_tx: f64, gain_rx: f64) -> f64 {
        let budget = power + gain_tx + gain_rx - self.pl0 - self.rx_sensitivity;
        libm::pow(10.0, budget / (10.0 * self.path_loss_exponent))
    }
}

/// Log-distance path loss `pl0 + 10 n log10(d / 1 m)`; distances below
/// 0.1 m are clamped.
pub fn path_loss_db(distance_m: f64, params: &PhyParams) -> f64 {
    let d = if distance_m.is_nan() || distance_m < MIN_DISTANCE_M { MIN_DISTANCE_M } else { distance_m };
    params.pl0 + 10.0 * params.path_loss_exponent * libm::log10(d)
}

pub fn received_power(tx_dbm: f64, gain_tx: f64, gain_rx: f64, pl_db: f64) -> f64 {
    tx_dbm + gain_tx + gain_rx - pl_db
}

/// Map received power onto 0..=255: zero at or below sensitivity, saturated
/// at sensitivity plus the margin, linear in dB between with round half up.
pub fn lq_from_rx_power(rx_dbm: f64, params: &PhyParams) -> u8 {
    let s = params.rx_sensitivity;
    let m = params.lq_saturation_margin;
    if rx_dbm <= s {
        return 0;
    }
    if rx_dbm >= s + m {
        return 255;
    }
    let scaled = 255.0 * (rx_dbm - s) / m;
    let v = libm::floor(scaled + 0.5);
    v.clamp(0.0, 255.0) as u8
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    libm::hypot(a.0 - b.0, a.1 - b.1)
}

/// One end of a link: where a radio is and its antenna gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Radio {
    pub position: (f64, f64),
    pub antenna_gain: f64,
}

/// Received power at `rx` for a frame sent by `tx` at `power` dBm.
pub fn link_rx_power(tx: Radio, rx: Radio, power: f64, params: &PhyParams) -> f64 {
    let pl = path_loss_db(distance(tx.position, rx.position), params);
    received_power(power, tx.antenna_gain, rx.antenna_gain, pl)
}

/// True iff the frame arrives strictly above sensitivity.
pub fn in_range(tx: Radio, rx: Radio, power: f64, params: &PhyParams) -> bool {
    link_rx_power(tx, rx, power, params) > params.rx_sensitivity
}

/// Received-power observation of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSample {
    pub rx_power: f64,
    pub lq: u8,
    pub time: SimTime,
    pub from: u16,
    /// Power the observed frame was sent at, dBm.
    pub sent_at: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PhyParams {
        PhyParams { pl0: 40.0, path_loss_exponent: 2.0, rx_sensitivity: -85.0, ..PhyParams::default() }
    }

    #[test]
    fn channel_frequencies() {
        assert_eq!(channel_center_frequency(11), Ok(2405));
        assert_eq!(channel_center_frequency(26), Ok(2480));
        assert_eq!(channel_center_frequency(10), Err(PhyError::ChannelOutOfRange(10)));
        assert_eq!(channel_center_frequency(27), Err(PhyError::ChannelOutOfRange(27)));
        let freqs: alloc::vec::Vec<u32> = (11..=26).map(|c| channel_center_frequency(c).unwrap()).collect();
        assert_eq!(freqs.len(), 16);
        assert!(freqs.windows(2).all(|w| w[1] - w[0] == 5));
    }

    #[test]
    fn beacon_intervals_at_extremes() {
        let bo = |b| BeaconOrder::new(b).unwrap();
        assert_eq!(beacon_interval(bo(14), Band::B2400).unwrap().as_micros(), 251_658_240);
        assert_eq!(beacon_interval(bo(14), Band::B915).unwrap().as_micros(), 393_216_000);
        assert_eq!(beacon_interval(bo(14), Band::B868).unwrap().as_micros(), 786_432_000);
        assert_eq!(beacon_interval(bo(0), Band::B2400).unwrap().as_micros(), 15_360);
        assert_eq!(beacon_interval(BeaconOrder::NON_BEACON, Band::B2400), Err(PhyError::NonBeaconMode));
        assert!(BeaconOrder::new(16).is_err());
    }

    #[test]
    fn beacon_interval_doubles_per_order() {
        for band in [Band::B2400, Band::B915, Band::B868] {
            for b in 0..14 {
                let lo = beacon_interval(BeaconOrder::new(b).unwrap(), band).unwrap();
                let hi = beacon_interval(BeaconOrder::new(b + 1).unwrap(), band).unwrap();
                assert_eq!(hi.as_micros(), 2 * lo.as_micros());
            }
        }
    }

    #[test]
    fn airtime() {
        assert_eq!(frame_airtime(10, Band::B2400).as_micros(), 320);
        assert_eq!(frame_airtime(10, Band::B868).as_micros(), 4000);
        assert_eq!(frame_airtime(1, Band::B2400).as_micros(), 32);
        // 3 bytes at 40 kbit/s is 600 us exactly; 1 byte rounds 200 up
        assert_eq!(frame_airtime(3, Band::B915).as_micros(), 600);
    }

    #[test]
    fn path_loss() {
        let p = params();
        assert_eq!(path_loss_db(1.0, &p), p.pl0);
        let delta = path_loss_db(8.0, &p) - path_loss_db(4.0, &p);
        assert!((delta - 6.0206).abs() < 1e-4);
        assert_eq!(path_loss_db(0.0, &p), path_loss_db(0.1, &p));
    }

    #[test]
    fn link_budget_arithmetic() {
        assert_eq!(received_power(0.0, 0.0, 0.0, 85.0), -85.0);
        assert_eq!(received_power(4.0, 0.0, 0.0, 85.0), -81.0);
        assert_eq!(received_power(0.0, 3.0, 0.0, 85.0), -82.0);
    }

    #[test]
    fn lq_mapping_edges() {
        let p = params();
        let s = p.rx_sensitivity;
        assert_eq!(lq_from_rx_power(s, &p), 0);
        assert_eq!(lq_from_rx_power(s - 10.0, &p), 0);
        assert_eq!(lq_from_rx_power(s + 40.0, &p), 255);
        assert_eq!(lq_from_rx_power(s + 20.0, &p), 128);
        assert_eq!(lq_from_rx_power(s + 0.01, &p), 0);
        assert_eq!(lq_from_rx_power(s + 39.99, &p), 255);
    }

    #[test]
    fn in_range_is_strict() {
        let p = params();
        let a = Radio { position: (0.0, 0.0), antenna_gain: 0.0 };
        // pick the distance where rx lands exactly on sensitivity: 45 dB of
        // budget at n = 2 is 10^(45/20) m; use a power that makes 1 m exact
        let b = Radio { position: (1.0, 0.0), antenna_gain: 0.0 };
        assert!(!in_range(a, b, p.rx_sensitivity + p.pl0, &p));
        assert!(in_range(a, b, p.rx_sensitivity + p.pl0 + 0.1, &p));
        assert!(in_range(a, b, 0.0, &p));
    }

    #[test]
    fn range_matches_in_range_threshold() {
        let p = PhyParams::default();
        let r = p.range_m(0.0, 0.0, 0.0);
        let a = Radio { position: (0.0, 0.0), antenna_gain: 0.0 };
        let inside = Radio { position: (r - 1e-6, 0.0), antenna_gain: 0.0 };
        let outside = Radio { position: (r + 1e-6, 0.0), antenna_gain: 0.0 };
        assert!(in_range(a, inside, 0.0, &p));
        assert!(!in_range(a, outside, 0.0, &p));
    }
}
