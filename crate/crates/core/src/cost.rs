//! Monthly infrastructure cost of edge and cloud pipelines.
//!
//! Each cost component is computed in `f64`, rounded half-even to whole
//! micro-dollars and only then summed, so totals are exact sums of the
//! printed components. Sizes use binary units: 1 KB = 1024 B, 1 MB = 1024 KB,
//! 1 GB = 1024 MB.

use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BYTES_PER_KB: f64 = 1024.0;
pub const BYTES_PER_MB: f64 = 1024.0 * 1024.0;
pub const BYTES_PER_GB: f64 = 1024.0 * 1024.0 * 1024.0;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid cost input: {field} = {value} (must be finite and >= 0)")]
pub struct InvalidCostInput {
    pub field: &'static str,
    pub value: f64,
}

/// Money in integer micro-dollars.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MicroUsd(pub i64);

impl MicroUsd {
    pub fn from_usd(usd: f64) -> Self {
        MicroUsd((usd * 1e6).round_ties_even() as i64)
    }

    pub fn as_usd(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Value in units of 1e-4 dollars, rounded half-even.
    fn ten_thousandths(self) -> i64 {
        let q = self.0.div_euclid(100);
        let r = self.0.rem_euclid(100);
        if r > 50 || (r == 50 && q % 2 != 0) {
            q + 1
        } else {
            q
        }
    }
}

impl Add for MicroUsd {
    type Output = MicroUsd;

    fn add(self, rhs: MicroUsd) -> MicroUsd {
        MicroUsd(self.0 + rhs.0)
    }
}

impl fmt::Display for MicroUsd {
    /// Dollars with four decimals, rounded half-even.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.ten_thousandths();
        let sign = if t < 0 { "-" } else { "" };
        let t = t.abs();
        write!(f, "{sign}{}.{:04}", t / 10_000, t % 10_000)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateCard {
    #[serde(default)]
    pub name: Option<String>,
    pub edge_runtime_usd_per_device_month: f64,
    pub storage_usd_per_gb_month: f64,
    pub put_usd_per_1k: f64,
    pub get_usd_per_1k: f64,
    pub function_usd_per_gb_s: f64,
    #[serde(default)]
    pub function_usd_per_invocation: f64,
}

impl RateCard {
    pub fn validate(&self) -> Result<(), InvalidCostInput> {
        check(
            "edge_runtime_usd_per_device_month",
            self.edge_runtime_usd_per_device_month,
        )?;
        check("storage_usd_per_gb_month", self.storage_usd_per_gb_month)?;
        check("put_usd_per_1k", self.put_usd_per_1k)?;
        check("get_usd_per_1k", self.get_usd_per_1k)?;
        check("function_usd_per_gb_s", self.function_usd_per_gb_s)?;
        check(
            "function_usd_per_invocation",
            self.function_usd_per_invocation,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UsageScenario {
    pub messages_per_month: u64,
    /// Edge result message size including headers.
    pub avg_message_kb: f64,
    /// Raw input item size.
    pub avg_input_kb: f64,
    pub function_exec_ms: f64,
    pub function_mem_gb: f64,
    #[serde(default = "one_device")]
    pub devices: u32,
}

fn one_device() -> u32 {
    1
}

impl UsageScenario {
    pub fn validate(&self) -> Result<(), InvalidCostInput> {
        check("avg_message_kb", self.avg_message_kb)?;
        check("avg_input_kb", self.avg_input_kb)?;
        check("function_exec_ms", self.function_exec_ms)?;
        check("function_mem_gb", self.function_mem_gb)
    }

    fn thousands_of_requests(&self) -> f64 {
        self.messages_per_month as f64 / 1000.0
    }

    fn result_gb(&self) -> f64 {
        self.messages_per_month as f64 * self.avg_message_kb * BYTES_PER_KB / BYTES_PER_GB
    }

    fn input_gb(&self) -> f64 {
        self.messages_per_month as f64 * self.avg_input_kb * BYTES_PER_KB / BYTES_PER_GB
    }
}

fn check(field: &'static str, value: f64) -> Result<(), InvalidCostInput> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(InvalidCostInput { field, value })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLine {
    pub label: String,
    pub amount: MicroUsd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub lines: Vec<CostLine>,
    pub total: MicroUsd,
}

impl CostBreakdown {
    fn from_lines(lines: Vec<(&str, f64)>) -> Self {
        let lines: Vec<CostLine> = lines
            .into_iter()
            .map(|(label, usd)| CostLine {
                label: label.to_string(),
                amount: MicroUsd::from_usd(usd),
            })
            .collect();
        let total = lines.iter().fold(MicroUsd(0), |acc, l| acc + l.amount);
        Self { lines, total }
    }

    /// `a + b + c = total` with every term at four decimals.
    pub fn additive_form(&self) -> String {
        let terms: Vec<String> = self.lines.iter().map(|l| l.amount.to_string()).collect();
        format!("{} = ${}", terms.join(" + "), self.total)
    }
}

/// Runtime fee per device, result storage and one PUT per result message.
pub fn edge_monthly_cost(
    card: &RateCard,
    usage: &UsageScenario,
) -> Result<CostBreakdown, InvalidCostInput> {
    card.validate()?;
    usage.validate()?;
    Ok(CostBreakdown::from_lines(vec![
        (
            "edge runtime",
            f64::from(usage.devices) * card.edge_runtime_usd_per_device_month,
        ),
        (
            "result storage",
            usage.result_gb() * card.storage_usd_per_gb_month,
        ),
        (
            "result puts",
            usage.thousands_of_requests() * card.put_usd_per_1k,
        ),
    ]))
}

/// Raw input and result storage, one GET and two PUTs per item, and function
/// compute (GB-seconds plus the per-invocation fee when it is non-zero).
pub fn cloud_monthly_cost(
    card: &RateCard,
    usage: &UsageScenario,
) -> Result<CostBreakdown, InvalidCostInput> {
    card.validate()?;
    usage.validate()?;
    let gb_s =
        usage.messages_per_month as f64 * usage.function_exec_ms / 1000.0 * usage.function_mem_gb;
    let mut lines = vec![
        (
            "input storage",
            usage.input_gb() * card.storage_usd_per_gb_month,
        ),
        (
            "result storage",
            usage.result_gb() * card.storage_usd_per_gb_month,
        ),
        (
            "requests (get + 2 put)",
            usage.thousands_of_requests() * (card.get_usd_per_1k + 2.0 * card.put_usd_per_1k),
        ),
        ("function compute", gb_s * card.function_usd_per_gb_s),
    ];
    if card.function_usd_per_invocation > 0.0 {
        lines.push((
            "function invocations",
            usage.messages_per_month as f64 * card.function_usd_per_invocation,
        ));
    }
    Ok(CostBreakdown::from_lines(lines))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Edge,
    Cloud,
}

/// Bytes a month of traffic puts on the device link. Edge pipelines send
/// result messages; cloud pipelines upload raw inputs.
pub fn monthly_bandwidth(usage: &UsageScenario, mode: PipelineKind) -> u64 {
    let kb = match mode {
        PipelineKind::Edge => usage.avg_message_kb,
        PipelineKind::Cloud => usage.avg_input_kb,
    };
    (usage.messages_per_month as f64 * kb * BYTES_PER_KB).round_ties_even() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn card() -> RateCard {
        toml::from_str(include_str!("../fixtures/cost/us-east-2018.toml")).unwrap()
    }

    fn usage() -> UsageScenario {
        toml::from_str(include_str!("../fixtures/cost/camera-image.toml")).unwrap()
    }

    #[test]
    fn display_rounds_half_even() {
        assert_eq!(MicroUsd(1_558_388).to_string(), "1.5584");
        assert_eq!(MicroUsd(15_850).to_string(), "0.0158");
        assert_eq!(MicroUsd(15_750).to_string(), "0.0158");
        assert_eq!(MicroUsd(15_650).to_string(), "0.0156");
        assert_eq!(MicroUsd(0).to_string(), "0.0000");
    }

    #[test]
    fn reference_edge_cost() {
        let b = edge_monthly_cost(&card(), &usage()).unwrap();
        let amounts: Vec<String> = b.lines.iter().map(|l| l.amount.to_string()).collect();
        assert_eq!(amounts, ["0.2627", "0.0057", "1.2900"]);
        assert!((b.total.as_usd() - 1.5584).abs() < 0.001);
    }

    #[test]
    fn reference_cloud_cost() {
        let b = cloud_monthly_cost(&card(), &usage()).unwrap();
        let amounts: Vec<String> = b.lines.iter().map(|l| l.amount.to_string()).collect();
        assert_eq!(amounts, ["0.8140", "0.0057", "2.6900", "4.5170"]);
        assert!((b.total.as_usd() - 8.027).abs() < 0.005);
        let e = edge_monthly_cost(&card(), &usage()).unwrap();
        let ratio = b.total.as_usd() / e.total.as_usd();
        assert!((ratio - 5.2).abs() <= 0.05, "{ratio}");
    }

    #[test]
    fn zero_messages_is_runtime_fee_only() {
        let mut u = usage();
        u.messages_per_month = 0;
        let b = edge_monthly_cost(&card(), &u).unwrap();
        assert_eq!(
            b.total,
            MicroUsd::from_usd(card().edge_runtime_usd_per_device_month)
        );
    }

    #[test]
    fn doubling_messages_doubles_variable_edge_terms() {
        let mut u = usage();
        let one = edge_monthly_cost(&card(), &u).unwrap();
        u.messages_per_month *= 2;
        let two = edge_monthly_cost(&card(), &u).unwrap();
        assert_eq!(one.lines[0].amount, two.lines[0].amount);
        for i in 1..3 {
            assert!((two.lines[i].amount.0 - 2 * one.lines[i].amount.0).abs() <= 1);
        }
    }

    #[test]
    fn request_costs_only_without_sizes_or_exec() {
        let mut u = usage();
        u.avg_input_kb = 0.0;
        u.avg_message_kb = 0.0;
        u.function_exec_ms = 0.0;
        let b = cloud_monthly_cost(&card(), &u).unwrap();
        let c = card();
        let expected = MicroUsd::from_usd(259.2 * (c.get_usd_per_1k + 2.0 * c.put_usd_per_1k));
        assert_eq!(b.total, expected);
    }

    #[test]
    fn reference_bandwidth() {
        let edge = monthly_bandwidth(&usage(), PipelineKind::Edge) as f64 / BYTES_PER_MB;
        assert!((edge - 253.125).abs() < 1e-9);
        let cloud = monthly_bandwidth(&usage(), PipelineKind::Cloud) as f64 / BYTES_PER_GB;
        assert!((cloud - 35.38).abs() / 35.38 < 0.01, "{cloud}");
        let mut u = usage();
        u.messages_per_month = 0;
        assert_eq!(monthly_bandwidth(&u, PipelineKind::Edge), 0);
        assert_eq!(monthly_bandwidth(&u, PipelineKind::Cloud), 0);
    }

    #[test]
    fn negative_rates_rejected() {
        let mut c = card();
        c.put_usd_per_1k = -1.0;
        assert!(edge_monthly_cost(&c, &usage()).is_err());
    }

    fn arb_usage() -> impl Strategy<Value = UsageScenario> {
        (
            0u64..5_000_000,
            0.0..10.0f64,
            0.0..1000.0f64,
            0.0..5000.0f64,
            0.0..4.0f64,
            1u32..100,
        )
            .prop_map(|(m, msg, input, exec, mem, devices)| UsageScenario {
                messages_per_month: m,
                avg_message_kb: msg,
                avg_input_kb: input,
                function_exec_ms: exec,
                function_mem_gb: mem,
                devices,
            })
    }

    proptest! {
        #[test]
        fn costs_are_additive_in_messages(u in arb_usage(), extra in 0u64..5_000_000) {
            // cost(m1 + m2) = cost(m1) + cost(m2) - fixed, up to per-line rounding.
            let c = card();
            let mut a = u.clone();
            let mut b = u.clone();
            b.messages_per_month = extra;
            let mut ab = u.clone();
            ab.messages_per_month = u.messages_per_month + extra;
            let fixed = MicroUsd::from_usd(f64::from(u.devices) * c.edge_runtime_usd_per_device_month).0;
            let e = |x: &UsageScenario| edge_monthly_cost(&c, x).unwrap().total.0;
            prop_assert!((e(&ab) - (e(&a) + e(&b) - fixed)).abs() <= 3);
            let cl = |x: &UsageScenario| cloud_monthly_cost(&c, x).unwrap().total.0;
            prop_assert!((cl(&ab) - (cl(&a) + cl(&b))).abs() <= 4);
            a.messages_per_month = 0;
            prop_assert_eq!(cl(&a), 0);
        }

        #[test]
        fn costs_are_monotone(u in arb_usage(), bump in 0.0..10.0f64, which in 0usize..5) {
            let c = card();
            let mut v = u.clone();
            match which {
                0 => v.messages_per_month += (bump * 1000.0) as u64,
                1 => v.avg_message_kb += bump,
                2 => v.avg_input_kb += bump,
                3 => v.function_exec_ms += bump,
                _ => v.function_mem_gb += bump,
            }
            prop_assert!(edge_monthly_cost(&c, &v).unwrap().total >= edge_monthly_cost(&c, &u).unwrap().total);
            prop_assert!(cloud_monthly_cost(&c, &v).unwrap().total >= cloud_monthly_cost(&c, &u).unwrap().total);
        }

        #[test]
        fn edge_bandwidth_never_exceeds_cloud(u in arb_usage()) {
            let mut u = u;
            u.avg_input_kb = u.avg_input_kb.max(u.avg_message_kb);
            prop_assert!(monthly_bandwidth(&u, PipelineKind::Edge) <= monthly_bandwidth(&u, PipelineKind::Cloud));
        }
    }
}
