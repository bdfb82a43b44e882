mod common;

use std::fs;

use mobcount::simulator::{self, files, simulate, true_counts, Scenario};

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulator::write_simulation(a.path(), &common::simulated(9)).unwrap();
    simulator::write_simulation(b.path(), &common::simulated(9)).unwrap();
    for name in [
        files::EVENTS,
        files::SIGNAL,
        files::CELLS,
        files::GRID,
        files::PARAMS,
        files::REGIONS,
        files::REGISTER,
        files::PNT_RATE,
        files::TRUTH_TRACKS,
        files::TRUTH_DEVICES,
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let other = common::simulated(10);
    assert_ne!(other.events, common::simulated(9).events);
}

#[test]
fn counts_tally_every_person() {
    let sim = common::simulated(2);
    for k in 0..sim.scenario.time_axis.len() {
        let counts = true_counts(&sim.truth, &sim.regions, k);
        assert_eq!(counts.values().sum::<u64>(), sim.scenario.persons as u64);
    }
    assert_eq!(sim.register.counts, true_counts(&sim.truth, &sim.regions, 0));
}

#[test]
fn one_event_per_device_and_tick_on_a_serving_antenna() {
    let sim = common::simulated(5);
    let ticks = sim.scenario.time_axis.len();
    for (device, evs) in sim.events.by_device() {
        assert_eq!(evs.len(), ticks, "{device}");
        for (k, e) in evs.iter().enumerate() {
            let tile = sim.truth.device_tile(device, k).unwrap();
            let a = sim.signal.antenna_index(&e.antenna_id).unwrap();
            assert!(sim.signal.value(a, tile) > 0.0);
        }
    }
}

#[test]
fn walk_moves_to_queen_neighbours() {
    let sim = common::simulated(6);
    let grid = &sim.scenario.grid;
    for p in &sim.truth.persons {
        for w in p.tiles.windows(2) {
            let (r0, c0) = grid.row_col(w[0]).unwrap();
            let (r1, c1) = grid.row_col(w[1]).unwrap();
            assert!(r0.abs_diff(r1) <= 1 && c0.abs_diff(c1) <= 1);
        }
    }
}

#[test]
fn device_mix_follows_probabilities() {
    let scenario = Scenario {
        persons: 4000,
        ..Scenario::default()
    };
    let sim = simulate(&scenario).unwrap();
    let n = scenario.persons as f64;
    for (k, p) in [(0usize, 0.2), (1, 0.6), (2, 0.2)] {
        let share = sim.truth.persons.iter().filter(|x| x.devices.len() == k).count() as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        assert!((share - p).abs() < 4.0 * se, "{k} devices: {share}");
    }
}
