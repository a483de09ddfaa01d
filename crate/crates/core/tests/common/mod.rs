#![allow(dead_code)]

use twinmigrate::game_model::{
    MigrationTask, MrpParams, MspParams, RadioParams, Scenario, SocialMatrix, DEFAULT_BANDWIDTH_UNIT_HZ,
};

/// One MSP, one MRP; `max_delay_s` controls whether the delay budget binds.
pub fn toy_1x1(alpha: f64, beta: f64, cost: f64, price_max: f64, max_delay_s: f64) -> Scenario {
    Scenario::new(
        vec![MspParams {
            task: MigrationTask::from_megabytes(10.0, 5.0e9, max_delay_s),
            alpha,
            beta,
            compute_capability_hz: 15.0e9,
        }],
        vec![MrpParams {
            cost,
            arrival_rate: 450.0,
            service_rate: 500.0,
            cpu_hz: 15.0e9,
            price_max,
        }],
        SocialMatrix::new(vec![vec![0.0]]).unwrap(),
        RadioParams::default(),
        DEFAULT_BANDWIDTH_UNIT_HZ,
        1.0,
    )
    .unwrap()
}

pub struct GridOptimum {
    pub price: f64,
    pub demand: f64,
    pub mrp_utility: f64,
    pub msp_utility: f64,
}

/// Brute-force leader/follower optimum of a one-MSP, one-MRP market:
/// for each price on a uniform grid the follower takes the best feasible
/// demand on a uniform grid (any demand when none is feasible), and the
/// leader keeps the best price. Formulas are written out here directly.
pub fn nested_grid_oracle(s: &Scenario, price_points: usize, demand_points: usize) -> GridOptimum {
    let msp = s.msp(0);
    let mrp = s.mrp(0);
    let rate = s.bandwidth_unit_hz() * s.radio().spectral_efficiency();
    let fixed = mrp.arrival_rate / (mrp.service_rate * (mrp.service_rate - mrp.arrival_rate)) + msp.task.cpu_cycles / mrp.cpu_hz;
    let delay = |b: f64| if b > 0.0 { msp.task.data_size_bits / (b * rate) + fixed } else { f64::INFINITY };
    let dmax = s.demand_max();
    let any_feasible = delay(dmax) <= msp.task.max_delay_s;
    let demand_at = |k: usize| dmax * k as f64 / (demand_points - 1) as f64;

    let mut best = GridOptimum { price: f64::NAN, demand: f64::NAN, mrp_utility: f64::NEG_INFINITY, msp_utility: f64::NAN };
    for q in 0..price_points {
        let p = mrp.cost + (mrp.price_max - mrp.cost) * q as f64 / (price_points - 1) as f64;
        let (mut b_best, mut u_best) = (f64::NAN, f64::NEG_INFINITY);
        for k in 0..demand_points {
            let b = demand_at(k);
            if any_feasible && delay(b) > msp.task.max_delay_s {
                continue;
            }
            let u = msp.alpha * b - msp.beta * b * b - b * p;
            if u > u_best {
                b_best = b;
                u_best = u;
            }
        }
        let u_l = b_best * (p - mrp.cost);
        if u_l > best.mrp_utility {
            best = GridOptimum { price: p, demand: b_best, mrp_utility: u_l, msp_utility: u_best };
        }
    }
    best
}

/// A spawned `twinmigrate env-serve` speaking over stdio.
pub struct WireClient {
    child: std::process::Child,
    stdin: std::process::ChildStdin,
    stdout: std::io::BufReader<std::process::ChildStdout>,
}

impl WireClient {
    pub fn spawn(args: &[&str]) -> Self {
        use std::process::{Command, Stdio};
        let mut child = Command::new(env!("CARGO_BIN_EXE_twinmigrate"))
            .arg("env-serve")
            .args(args)
            .env_remove("TWINMIGRATE_SEED")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .expect("spawn env-serve");
        let stdin = child.stdin.take().unwrap();
        let stdout = std::io::BufReader::new(child.stdout.take().unwrap());
        WireClient { child, stdin, stdout }
    }

    /// Sends one line and returns the single response line.
    pub fn send(&mut self, line: &str) -> String {
        use std::io::{BufRead, Write};
        writeln!(self.stdin, "{line}").unwrap();
        self.stdin.flush().unwrap();
        let mut out = String::new();
        self.stdout.read_line(&mut out).unwrap();
        assert!(out.ends_with('\n'), "response not newline terminated: {out:?}");
        out.pop();
        out
    }

    pub fn request(&mut self, req: &twinmigrate::protocol::Request) -> twinmigrate::protocol::Response {
        let line = serde_json::to_string(req).unwrap();
        serde_json::from_str(&self.send(&line)).unwrap()
    }

    pub fn close(mut self) -> std::process::ExitStatus {
        let bye = self.send(r#"{"type":"close"}"#);
        assert_eq!(bye, r#"{"type":"bye"}"#);
        drop(self.stdin);
        self.child.wait().unwrap()
    }
}
