use abrsim::experiment::{self, parse_config, GridPoint};
use abrsim::network::Network;
use abrsim::topology::{PolicyKind, Service, Traffic};
use abrsim::{kernel::Simulation, simulate, NSourceConfig, SimTime};
use proptest::prelude::*;

fn short(n: usize, km: f64) -> NSourceConfig {
    NSourceConfig {
        n,
        link_km: km,
        horizon_s: Some(0.15),
        ..NSourceConfig::default()
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let cfg = NSourceConfig {
        start_jitter_ms: 4.0,
        record_series: true,
        ..short(4, 100.0)
    };
    let a = simulate(&cfg).unwrap();
    let b = simulate(&cfg).unwrap();
    assert_eq!(a.events_processed, b.events_processed);
    assert_eq!(a.delivered_bytes, b.delivered_bytes);
    assert_eq!(a.series.cwnd, b.series.cwnd);
    assert_eq!(a.bottleneck_max_queue, b.bottleneck_max_queue);

    let c = simulate(&NSourceConfig { seed: 99, ..cfg }).unwrap();
    assert_ne!(a.series.cwnd, c.series.cwnd, "jittered starts should depend on the seed");
}

#[test]
fn kernel_accounts_for_every_event() {
    let cfg = short(3, 200.0);
    let net = Network::build(&cfg).unwrap();
    let horizon = net.horizon();
    let mut sim = Simulation::new(net, cfg.seed);
    sim.model.start(&mut sim.sched).unwrap();
    let out = sim.run_until(horizon).unwrap();
    assert_eq!(out.clock, horizon);
    let c = sim.sched.counts();
    assert_eq!(c.scheduled, c.fired + c.cancelled + c.pending);
    assert_eq!(c.fired, out.events_processed);
    assert_eq!(c.pending as usize, sim.sched.pending().count());
}

#[test]
fn loss_free_run_never_times_out() {
    let m = simulate(&short(2, 50.0)).unwrap();
    assert_eq!(m.cells_dropped, 0);
    assert_eq!(m.timeouts, 0);
    assert_eq!(m.duplicates_discarded, 0);
    assert!(m.in_order && m.conserved());
}

#[test]
fn unconstrained_ack_path_delivers() {
    let m = simulate(&NSourceConfig {
        ack_path: abrsim::topology::AckPath::Unconstrained,
        ..short(2, 50.0)
    })
    .unwrap();
    assert!(m.aggregate_goodput_mbps() > 50.0);
    assert!(m.conserved());
}

#[test]
fn failed_point_keeps_completed_rows() {
    let spec = parse_config("n = [1, 2]\nlink_km = 20\nhorizon_s = 0.05\n").unwrap();
    let mut points: Vec<GridPoint> = spec.grid().unwrap();
    // Corrupt the second point after validation so only its run fails.
    points[1].config.mss = 0;
    let results = experiment::run_points(&points, 1);
    let mut buf = Vec::new();
    let (report, kept) = experiment::write_csv(&mut buf, &points, results).unwrap();
    assert_eq!(report.completed, 1);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].0, 1);
    assert!(kept[0].is_some() && kept[1].is_none());
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
}

#[cfg(feature = "parallel")]
#[test]
fn parallel_and_sequential_sweeps_agree() {
    let spec = parse_config("n = [1, 2, 3]\nlink_km = [20, 100]\nhorizon_s = 0.05\n").unwrap();
    let points = spec.grid().unwrap();
    let csv = |r| {
        let mut buf = Vec::new();
        experiment::write_csv(&mut buf, &points, r).unwrap();
        buf
    };
    assert_eq!(
        csv(experiment::run_points_sequential(&points)),
        csv(experiment::run_points_parallel(&points, 3))
    );
}

#[test]
fn greedy_sources_share_a_short_link() {
    let m = simulate(&NSourceConfig {
        traffic: Traffic::Greedy,
        horizon_s: Some(0.3),
        ..short(3, 20.0)
    })
    .unwrap();
    assert!(m.goodput_fairness() < 1.1, "{:?}", m.goodput_mbps);
    assert_eq!(m.acr_bound_violations, 0);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn random_networks_conserve_cells(
        n in 1usize..5,
        km in 1.0f64..300.0,
        ubr in any::<bool>(),
        epd in any::<bool>(),
        buffer in 200usize..5000,
        jitter in 0.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let mut cfg = NSourceConfig {
            start_jitter_ms: jitter,
            seed,
            horizon_s: Some(0.08),
            ..short(n, km)
        };
        if ubr {
            cfg.service = Service::Ubr;
            cfg.ubr_buffer_cells = Some(buffer);
            if epd {
                cfg.drop_policy = PolicyKind::Epd;
            }
        }
        let m = simulate(&cfg).unwrap();
        prop_assert!(m.conserved());
        prop_assert!(m.in_order);
        prop_assert_eq!(m.er_increases, 0);
        prop_assert_eq!(m.acr_bound_violations, 0);
        let sent: u64 = m.conservation.iter().map(|c| c.emitted).sum();
        prop_assert_eq!(sent, m.cells_sent);
        if !ubr {
            prop_assert_eq!(m.cells_dropped, 0);
        }
        prop_assert!(m.horizon == SimTime::from_secs_f64(0.08));
    }
}
