//! Energy accounting: AFE acquisition, MAC-based processing cost on the
//! embedded platform, a VLSI power projection and the comparison table.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Embedded processing platform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlatformSpec {
    /// GMAC per joule.
    pub efficiency_gmac_per_j: f64,
    /// GMAC per second.
    pub throughput_gmac_per_s: f64,
}

impl Default for PlatformSpec {
    fn default() -> Self {
        Self { efficiency_gmac_per_j: 31.3, throughput_gmac_per_s: 1.5 }
    }
}

impl PlatformSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency_gmac_per_j > 0.0 && self.throughput_gmac_per_s > 0.0) {
            return Err(Error::Parameter("platform efficiency and throughput must be positive".into()));
        }
        Ok(())
    }

    /// Joules for `macs` multiply-accumulates.
    pub fn processing_energy(&self, macs: f64) -> f64 {
        macs / (self.efficiency_gmac_per_j * 1e9)
    }

    /// Seconds for `macs` multiply-accumulates.
    pub fn processing_latency(&self, macs: f64) -> f64 {
        macs / (self.throughput_gmac_per_s * 1e9)
    }
}

pub fn processing_energy(macs: f64) -> f64 {
    PlatformSpec::default().processing_energy(macs)
}

pub fn processing_latency(macs: f64) -> f64 {
    PlatformSpec::default().processing_latency(macs)
}

/// One column of the AFE consumption table, in µJ per second of audio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AfeEnergyRow {
    pub n_filters: usize,
    pub afe_total: f64,
    pub microphone: f64,
    pub per_detector: f64,
    pub mcu_acquisition: f64,
    pub preprocessing_total: f64,
}

pub const AFE_ENERGY_TABLE: [AfeEnergyRow; 3] = [
    AfeEnergyRow { n_filters: 8, afe_total: 153.0, microphone: 36.0, per_detector: 15.0, mcu_acquisition: 131.0, preprocessing_total: 284.0 },
    AfeEnergyRow { n_filters: 16, afe_total: 306.0, microphone: 72.0, per_detector: 15.0, mcu_acquisition: 168.0, preprocessing_total: 488.0 },
    AfeEnergyRow { n_filters: 64, afe_total: 1248.0, microphone: 288.0, per_detector: 15.0, mcu_acquisition: 291.0, preprocessing_total: 1539.0 },
];

/// Conventional acquisition: MEMS microphone sampled through the ADC, µJ.
pub const BASELINE_ACQUISITION_UJ: f64 = 5400.0;
/// Conventional MFCC preprocessing, µJ.
pub const BASELINE_MFCC_UJ: f64 = 2640.0;
pub const DETECTOR_UJ: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcquisitionEnergy {
    pub micro_joules: f64,
    /// False when the value is a table entry.
    pub estimate: bool,
}

fn interpolate(n: f64, anchors: &[(f64, f64)]) -> f64 {
    let seg = anchors.windows(2).position(|w| n <= w[1].0).unwrap_or(anchors.len() - 2);
    let ((x0, y0), (x1, y1)) = (anchors[seg], anchors[seg + 1]);
    y0 + (n - x0) * (y1 - y0) / (x1 - x0)
}

/// Acquisition plus preprocessing energy of an `n_filters` AFE for one
/// second of audio. Table filter counts return the table totals; others
/// are estimated as microphone + 15 µJ per detector + MCU, with microphone
/// and MCU interpolated piecewise-linearly between the table columns.
pub fn afe_acquisition_energy(n_filters: usize) -> Result<AcquisitionEnergy> {
    if n_filters == 0 {
        return Err(Error::Parameter("n_filters must be at least 1".into()));
    }
    if let Some(row) = AFE_ENERGY_TABLE.iter().find(|r| r.n_filters == n_filters) {
        return Ok(AcquisitionEnergy { micro_joules: row.preprocessing_total, estimate: false });
    }
    let n = n_filters as f64;
    let mic: Vec<(f64, f64)> = AFE_ENERGY_TABLE.iter().map(|r| (r.n_filters as f64, r.microphone)).collect();
    let mcu: Vec<(f64, f64)> = AFE_ENERGY_TABLE.iter().map(|r| (r.n_filters as f64, r.mcu_acquisition)).collect();
    let value = interpolate(n, &mic).max(0.0) + DETECTOR_UJ * n + interpolate(n, &mcu).max(0.0);
    Ok(AcquisitionEnergy { micro_joules: value, estimate: true })
}

/// Application-specific integration estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VlsiSpec {
    pub afe_power_per_band_uw: f64,
    /// Operations per joule; one MAC counts as two operations.
    pub accelerator_ops_per_j: f64,
    pub classification_rate_hz: f64,
}

impl Default for VlsiSpec {
    fn default() -> Self {
        Self { afe_power_per_band_uw: 0.014, accelerator_ops_per_j: 2e15, classification_rate_hz: 2.0 }
    }
}

impl VlsiSpec {
    /// System power in µW.
    pub fn power(&self, n_filters: usize, macs_per_classification: f64) -> f64 {
        let afe = self.afe_power_per_band_uw * n_filters as f64;
        let accel_w = 2.0 * macs_per_classification * self.classification_rate_hz / self.accelerator_ops_per_j;
        afe + accel_w * 1e6
    }
}

pub fn vlsi_power(n_filters: usize, macs_per_classification: f64, rate_hz: f64) -> f64 {
    VlsiSpec { classification_rate_hz: rate_hz, ..VlsiSpec::default() }.power(n_filters, macs_per_classification)
}

/// Indices of the points not dominated by any other. `q` dominates `p` when
/// it has no more energy and strictly higher accuracy, or equal accuracy and
/// strictly less energy. Points are `(energy, accuracy)`.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| points[i].0.total_cmp(&points[j].0).then(points[j].1.total_cmp(&points[i].1)));
    // sweep by energy; a point survives if its accuracy beats everything cheaper
    let mut keep = vec![false; points.len()];
    let mut best_acc = f64::NEG_INFINITY;
    let mut k = 0;
    while k < order.len() {
        let e = points[order[k]].0;
        let mut end = k;
        while end < order.len() && points[order[end]].0 == e {
            end += 1;
        }
        // group of equal energy, sorted by accuracy descending
        let group_best = points[order[k]].1;
        for &i in &order[k..end] {
            let a = points[i].1;
            let beaten_same_energy = a < group_best;
            // every earlier group is strictly cheaper
            let beaten_cheaper = a <= best_acc;
            keep[i] = !beaten_same_energy && !beaten_cheaper;
        }
        best_acc = best_acc.max(group_best);
        k = end;
    }
    (0..points.len()).filter(|&i| keep[i]).collect()
}

/// One row of the state-of-the-art comparison, energies in mJ and
/// accuracies in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComparisonRow {
    pub method: &'static str,
    pub acquisition_mj: f64,
    pub processing_mj: f64,
    pub total_mj: f64,
    /// Published improvement over the reference; `None` for the reference.
    pub improvement: Option<f64>,
    pub accuracy_12: Option<f64>,
    pub accuracy_10: Option<f64>,
}

impl ComparisonRow {
    /// Accuracy used for ranking: 12-class when available, else 10-class.
    pub fn accuracy(&self) -> Option<f64> {
        self.accuracy_12.or(self.accuracy_10)
    }
}

pub const REFERENCE_METHOD: &str = "EGRU";

pub const COMPARISON_TABLE: [ComparisonRow; 5] = [
    ComparisonRow { method: "Hello Edge", acquisition_mj: 5.48, processing_mj: 5.04, total_mj: 10.52, improvement: Some(3.8), accuracy_12: Some(84.6), accuracy_10: None },
    ComparisonRow { method: "DS-CNN", acquisition_mj: 5.48, processing_mj: 5.57, total_mj: 11.05, improvement: Some(3.4), accuracy_12: Some(94.0), accuracy_10: None },
    ComparisonRow { method: "EGRU", acquisition_mj: 5.48, processing_mj: 34.52, total_mj: 40.00, improvement: None, accuracy_12: None, accuracy_10: Some(87.8) },
    ComparisonRow { method: "Ours (64-ch AFE, best acc.)", acquisition_mj: 1.54, processing_mj: 7.82, total_mj: 9.36, improvement: Some(4.3), accuracy_12: Some(86.0), accuracy_10: Some(88.8) },
    ComparisonRow { method: "Ours (8-ch AFE, lowest power)", acquisition_mj: 0.28, processing_mj: 0.27, total_mj: 0.56, improvement: Some(71.4), accuracy_12: Some(76.3), accuracy_10: Some(85.8) },
];

pub fn reference_row() -> &'static ComparisonRow {
    COMPARISON_TABLE.iter().find(|r| r.method == REFERENCE_METHOD).unwrap()
}

/// Improvement factor of `total_mj` over the reference system.
pub fn improvement_over_reference(total_mj: f64) -> f64 {
    reference_row().total_mj / total_mj
}

/// The system being costed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemConfig {
    pub n_filters: usize,
    pub macs_per_classification: u64,
    pub platform: PlatformSpec,
    /// Optional per-interrupt cost added on top of the table figures.
    pub joules_per_interrupt: Option<f64>,
    pub interrupts_per_second: f64,
}

impl SystemConfig {
    pub fn new(n_filters: usize, macs_per_classification: u64) -> Self {
        Self { n_filters, macs_per_classification, platform: PlatformSpec::default(), joules_per_interrupt: None, interrupts_per_second: 0.0 }
    }
}

/// Energy of one second of audio plus one classification, in µJ.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub n_filters: usize,
    pub macs: u64,
    /// Microphone, filters, detectors and MCU acquisition combined.
    pub acquisition_uj: f64,
    pub acquisition_is_estimate: bool,
    /// Interrupt correction term; 0 unless configured.
    pub preprocessing_uj: f64,
    pub classification_uj: f64,
    pub total_uj: f64,
    pub latency_s: f64,
    /// Same classifier behind the conventional microphone + ADC + MFCC chain.
    pub conventional_total_uj: f64,
    pub baselines: Vec<ComparisonRow>,
}

impl EnergyReport {
    pub fn total_mj(&self) -> f64 {
        self.total_uj / 1000.0
    }

    pub fn improvement(&self) -> f64 {
        improvement_over_reference(self.total_mj())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,acquisition_mj,processing_mj,total_mj,improvement_published,improvement_computed,accuracy_12,accuracy_10\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.baselines {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                csv_field(r.method),
                r.acquisition_mj,
                r.processing_mj,
                r.total_mj,
                opt(r.improvement),
                improvement_over_reference(r.total_mj),
                opt(r.accuracy_12),
                opt(r.accuracy_10)
            )
            .unwrap();
        }
        writeln!(
            out,
            "\"this system ({} filters)\",{},{},{},,{},,",
            self.n_filters,
            (self.acquisition_uj + self.preprocessing_uj) / 1000.0,
            self.classification_uj / 1000.0,
            self.total_mj(),
            self.improvement()
        )
        .unwrap();
        out
    }

    pub fn to_text(&self) -> String {
        let mut rows: Vec<[String; 6]> = vec![[
            "Method".into(),
            "Acq.+pre-proc. [mJ]".into(),
            "Processing [mJ]".into(),
            "Total [mJ]".into(),
            "Improv.".into(),
            "Acc. 12/10 [%]".into(),
        ]];
        let acc = |v: Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "--".into());
        for r in &self.baselines {
            rows.push([
                r.method.into(),
                format!("{:.2}", r.acquisition_mj),
                format!("{:.2}", r.processing_mj),
                format!("{:.2}", r.total_mj),
                r.improvement.map(|x| format!("{x:.1}x")).unwrap_or_else(|| "(ref.)".into()),
                format!("{} / {}", acc(r.accuracy_12), acc(r.accuracy_10)),
            ]);
        }
        rows.push([
            format!("This system ({} filters)", self.n_filters),
            format!("{:.3}", (self.acquisition_uj + self.preprocessing_uj) / 1000.0),
            format!("{:.3}", self.classification_uj / 1000.0),
            format!("{:.3}", self.total_mj()),
            format!("{:.1}x", self.improvement()),
            "-".into(),
        ]);
        let widths: Vec<usize> = (0..6).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap()).collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            let mut line = format!("{:<w$}", r[0], w = widths[0]);
            for c in 1..6 {
                write!(line, "  {:>w$}", r[c], w = widths[c]).unwrap();
            }
            writeln!(out, "{}", line.trim_end()).unwrap();
            if i == 0 {
                writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 10)).unwrap();
            }
        }
        writeln!(out).unwrap();
        writeln!(out, "MACs per classification: {}", self.macs).unwrap();
        writeln!(out, "Latency: {:.3} ms", self.latency_s * 1000.0).unwrap();
        if self.acquisition_is_estimate {
            writeln!(out, "Acquisition for {} filters is an estimate (not a table entry).", self.n_filters).unwrap();
        }
        writeln!(out, "Same classifier with microphone + ADC + MFCC: {:.3} mJ", self.conventional_total_uj / 1000.0).unwrap();
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn comparison_report(cfg: &SystemConfig) -> Result<EnergyReport> {
    cfg.platform.validate()?;
    let acq = afe_acquisition_energy(cfg.n_filters)?;
    let macs = cfg.macs_per_classification as f64;
    let classification_uj = cfg.platform.processing_energy(macs) * 1e6;
    let preprocessing_uj = match cfg.joules_per_interrupt {
        Some(j) if j < 0.0 || cfg.interrupts_per_second < 0.0 => {
            return Err(Error::Parameter("interrupt energy and rate must be non-negative".into()))
        }
        Some(j) => j * cfg.interrupts_per_second * 1e6,
        None => 0.0,
    };
    Ok(EnergyReport {
        n_filters: cfg.n_filters,
        macs: cfg.macs_per_classification,
        acquisition_uj: acq.micro_joules,
        acquisition_is_estimate: acq.estimate,
        preprocessing_uj,
        classification_uj,
        total_uj: acq.micro_joules + preprocessing_uj + classification_uj,
        latency_s: cfg.platform.processing_latency(macs),
        conventional_total_uj: BASELINE_ACQUISITION_UJ + BASELINE_MFCC_UJ + classification_uj,
        baselines: COMPARISON_TABLE.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_totals() {
        for (n, uj) in [(8, 284.0), (16, 488.0), (64, 1539.0)] {
            let e = afe_acquisition_energy(n).unwrap();
            assert_eq!(e.micro_joules, uj);
            assert!(!e.estimate);
        }
        assert!(afe_acquisition_energy(0).is_err());
    }

    #[test]
    fn estimates_between_and_beyond_anchors() {
        // 32 filters: mic 72 + 16*216/48 = 144, mcu 168 + 16*123/48 = 209
        let e = afe_acquisition_energy(32).unwrap();
        assert!(e.estimate);
        assert!((e.micro_joules - (144.0 + 15.0 * 32.0 + 209.0)).abs() < 1e-9);
        // 4 filters: mic 36 - 4*4.5 = 18, mcu 131 - 4*37/8 = 112.5
        let e = afe_acquisition_energy(4).unwrap();
        assert!((e.micro_joules - (18.0 + 60.0 + 112.5)).abs() < 1e-9);
        let a = afe_acquisition_energy(100).unwrap().micro_joules;
        let b = afe_acquisition_energy(128).unwrap().micro_joules;
        assert!(b > a && a > 1539.0);
    }

    #[test]
    fn processing_basics() {
        assert!((processing_energy(31.3e9) - 1.0).abs() < 1e-12);
        assert_eq!(processing_energy(0.0), 0.0);
        assert_eq!(processing_latency(0.0), 0.0);
        assert!((processing_energy(8.45e6) * 1e3 - 0.27).abs() < 0.005);
        assert!((processing_latency(1.5e9) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vlsi_examples() {
        assert!((vlsi_power(8, 0.0, 2.0) - 0.112).abs() < 1e-12);
        assert!((vlsi_power(64, 0.0, 2.0) - 0.896).abs() < 1e-12);
        assert!((vlsi_power(64, 15.7e6, 2.0) - 0.9274).abs() < 1e-9);
    }

    #[test]
    fn pareto_small_cases() {
        assert_eq!(pareto_front(&[(3.0, 0.5)]), vec![0]);
        assert_eq!(pareto_front(&[(1.0, 0.9), (2.0, 0.8)]), vec![0]);
        assert_eq!(pareto_front(&[(1.0, 0.8), (2.0, 0.9)]), vec![0, 1]);
        // equal accuracy, cheaper wins; exact duplicates both stay
        assert_eq!(pareto_front(&[(1.0, 0.8), (2.0, 0.8)]), vec![0]);
        assert_eq!(pareto_front(&[(1.0, 0.8), (1.0, 0.8)]), vec![0, 1]);
        assert!(pareto_front(&[]).is_empty());
    }

    fn brute_force(points: &[(f64, f64)]) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| {
                let p = points[i];
                !points.iter().enumerate().any(|(j, q)| j != i && ((q.0 <= p.0 && q.1 > p.1) || (q.1 == p.1 && q.0 < p.0)))
            })
            .collect()
    }

    proptest! {
        #[test]
        fn pareto_matches_brute_force(pts in proptest::collection::vec((0u8..20, 0u8..20), 0..100)) {
            let pts: Vec<(f64, f64)> = pts.into_iter().map(|(e, a)| (e as f64, a as f64 / 20.0)).collect();
            let front = pareto_front(&pts);
            prop_assert_eq!(&front, &brute_force(&pts));
            let sub: Vec<(f64, f64)> = front.iter().map(|&i| pts[i]).collect();
            prop_assert_eq!(brute_force(&sub).len(), sub.len());
        }

        #[test]
        fn processing_energy_is_linear(a in 0.0f64..1e10, b in 0.0f64..1e10) {
            let lhs = processing_energy(a + b);
            let rhs = processing_energy(a) + processing_energy(b);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1e-300));
        }
    }

    #[test]
    fn comparison_table_front() {
        let pts: Vec<(f64, f64)> = COMPARISON_TABLE.iter().map(|r| (r.total_mj, r.accuracy().unwrap())).collect();
        let names: Vec<&str> = pareto_front(&pts).iter().map(|&i| COMPARISON_TABLE[i].method).collect();
        assert_eq!(names, vec!["DS-CNN", "Ours (64-ch AFE, best acc.)", "Ours (8-ch AFE, lowest power)"]);
    }

    #[test]
    fn published_ratios() {
        assert_eq!(improvement_over_reference(40.0), 1.0);
        assert!((improvement_over_reference(9.36) - 4.3).abs() < 0.05);
        assert!((improvement_over_reference(0.56) - 71.4).abs() < 0.05);
        assert!((improvement_over_reference(10.52) - 3.8).abs() < 0.05);
    }

    #[test]
    fn report_totals() {
        let r = comparison_report(&SystemConfig::new(8, 8_450_000)).unwrap();
        assert_eq!(r.acquisition_uj, 284.0);
        assert!((r.total_uj - (r.acquisition_uj + r.preprocessing_uj + r.classification_uj)).abs() < 1e-9);
        assert!((r.total_mj() - 0.56).abs() < 0.01);
        assert!(r.to_csv().lines().count() == 7);
        assert!(r.to_text().contains("Hello Edge"));

        let mut cfg = SystemConfig::new(8, 0);
        cfg.joules_per_interrupt = Some(1e-6);
        cfg.interrupts_per_second = 500.0;
        let r = comparison_report(&cfg).unwrap();
        assert!((r.preprocessing_uj - 500.0).abs() < 1e-9);
        assert!((r.total_uj - 784.0).abs() < 1e-9);
    }
}
