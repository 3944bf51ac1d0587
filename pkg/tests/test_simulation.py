"""
Tests for the belt simulation.

This module tests the feeder, frame tiling and strike model, and runs the
whole line end to end: oracle purity, the statistical purity of the
published detector, the actuation-noise band, determinism and mass
conservation.
"""

import unittest
from collections import Counter
from dataclasses import replace

import numpy as np

from app.api.error_handling import ConfigError
from app.models.control import ActuationEvent, PaddleLayout
from app.models.geometry import BeltCalibration
from app.models.material import MATERIAL_CLASSES, BinOutcome, MaterialClass
from app.models.particle import Particle
from app.models.run_config import FeederConfig
from app.services.config_service import load_run_config
from app.services.control_service import paddle_for_x
from app.services.simulation_service import (
    Simulation, crossing_time, frame_index_for, frame_period_ms, half_window_ms, hit_probability,
    run, spawn, strike, trigger_frames
)

METAL = MaterialClass.METAL


def bayes_purity(config):
    """P(true = target | predicted = target) under the feed priors."""
    target = config.sim.target
    mix = config.sim.feeder.class_mix
    joint = {cls: mix[cls] * config.confusion.probability(cls, target) for cls in MATERIAL_CLASSES}
    return joint[target] / sum(joint.values())


class TestFrames(unittest.TestCase):
    """Test cases for camera triggering."""

    def setUp(self):
        """Set up test environment."""
        self.cal = BeltCalibration()

    def test_frames_tile_the_belt(self):
        """Consecutive frames are one field of view apart."""
        period = frame_period_ms(self.cal)
        self.assertAlmostEqual(period, self.cal.fov_length_mm / 1.2)
        frames = list(trigger_frames(self.cal, until_ms=3 * period))
        self.assertEqual([f.frame_id for f in frames], [0, 1, 2, 3])
        gaps = np.diff([f.capture_ts for f in frames]) * self.cal.belt_speed_mps
        np.testing.assert_allclose(gaps, self.cal.fov_length_mm)

    def test_stationary_belt(self):
        """A stopped belt produces a single frame and no period."""
        cal = BeltCalibration(belt_speed_mps=0.0)
        self.assertIsNone(frame_period_ms(cal))
        self.assertEqual(len(list(trigger_frames(cal, until_ms=10000))), 1)

    def test_each_fragment_in_one_frame(self):
        """The frame after the centroid enters the view still shows it."""
        period = frame_period_ms(self.cal)
        self.assertEqual(frame_index_for(0.0, period), 0)
        self.assertEqual(frame_index_for(period * 2.5, period), 3)
        self.assertEqual(frame_index_for(1.0, period), 1)

    def test_every_particle_sighted_once(self):
        """Over 10^4 fragments, each one shows up in exactly one processed frame."""
        config = load_run_config(overrides={
            'sim.particle_count': 10000, 'sim.seed': 3, 'detector.kind': 'oracle'
        })
        simulation = Simulation(config)
        simulation.run()
        seen = Counter(pid for ids in simulation.sightings.values() for pid in ids)
        self.assertEqual(len(simulation.particles), 10000)
        self.assertEqual(set(seen), {p.id for p in simulation.particles})
        self.assertEqual(set(seen.values()), {1})
        for particle in simulation.particles:
            self.assertIn(particle.id, simulation.sightings[particle.frame_id])


class TestFeeder(unittest.TestCase):
    """Test cases for particle spawning."""

    def setUp(self):
        """Set up test environment."""
        self.cal = BeltCalibration()
        self.feeder = FeederConfig()

    def test_clearance_and_seams(self):
        """Footprints keep their clearance and never cross a camera seam."""
        particles = list(spawn(self.feeder, self.cal, np.random.default_rng(1), count=2000))
        self.assertEqual(len(particles), 2000)
        seams = [1920 / self.cal.px_per_mm, 3840 / self.cal.px_per_mm]
        gap = self.feeder.min_gap_mm
        for i, a in enumerate(particles):
            for seam in seams:
                self.assertFalse(a.x_mm - a.w_mm / 2 < seam < a.x_mm + a.w_mm / 2)
            for b in particles[i + 1:]:
                along = abs(a.belt_offset_mm - b.belt_offset_mm)
                if along > 200.0:
                    break
                if abs(a.x_mm - b.x_mm) < (a.w_mm + b.w_mm) / 2 + gap:
                    self.assertGreaterEqual(along, (a.h_mm + b.h_mm) / 2 + gap - 1e-9)

    def test_spawn_order_and_mix(self):
        """Spawn times increase and the class mix follows the feeder shares."""
        particles = list(spawn(self.feeder, self.cal, np.random.default_rng(2), count=20000))
        times = [p.spawn_ts for p in particles]
        self.assertEqual(times, sorted(times))
        share = sum(1 for p in particles if p.true_class is METAL) / len(particles)
        self.assertAlmostEqual(share, 0.285, delta=0.015)

    def test_duration_bound(self):
        particles = list(spawn(self.feeder, self.cal, np.random.default_rng(3), until_ms=1000.0))
        self.assertTrue(particles)
        self.assertTrue(all(p.spawn_ts <= 1000.0 for p in particles))

    def test_needs_a_bound(self):
        with self.assertRaises(ConfigError):
            next(spawn(self.feeder, self.cal, np.random.default_rng(0)))


class TestStrike(unittest.TestCase):
    """Test cases for the strike model."""

    def setUp(self):
        """Set up test environment."""
        self.cal = BeltCalibration()
        self.layout = PaddleLayout()
        self.particle = Particle(0, METAL, 30.0, 30.0, 60.0, 0.0, 400.0, 1.2)
        self.paddle = paddle_for_x(400.0 * self.cal.px_per_mm, self.cal, self.layout)
        self.t = crossing_time(self.particle, self.cal, self.layout, 200.0)

    def test_struck_only_by_its_paddle(self):
        on_time = ActuationEvent(self.paddle, self.t, self.t + 20)
        wrong_paddle = ActuationEvent(self.paddle + 1, self.t, self.t + 20)
        too_late = ActuationEvent(self.paddle, self.t + 30, self.t + 50)

        def check(events):
            return strike(self.particle, events, self.cal, self.layout, 200.0)

        self.assertIs(check([on_time]), BinOutcome.POSITIVE)
        self.assertIs(check([wrong_paddle]), BinOutcome.NEGATIVE)
        self.assertIs(check([too_late]), BinOutcome.NEGATIVE)
        self.assertIs(check([]), BinOutcome.NEGATIVE)

    def test_hit_probability_closed_form(self):
        """The closed form agrees with sampled timing noise."""
        half = half_window_ms(self.particle)
        self.assertAlmostEqual(half, 12.5)
        self.assertEqual(hit_probability(half, 20.0, 0.0), 1.0)
        self.assertEqual(hit_probability(half, 20.0, 0.0, offset_ms=40.0), 0.0)

        rng = np.random.default_rng(4)
        events = [ActuationEvent(self.paddle, self.t, self.t + 20)]
        deltas = rng.normal(0.0, 15.0, size=20000)
        hits = sum(
            strike(self.particle, events, self.cal, self.layout, 200.0, float(d)) is BinOutcome.POSITIVE
            for d in deltas
        )
        # Binomial standard deviation is below 0.004 at n = 20,000
        self.assertAlmostEqual(hits / 20000, hit_probability(half, 20.0, 15.0), delta=0.015)


class TestEndToEnd(unittest.TestCase):
    """Whole-line runs."""

    def test_oracle_purity_every_target(self):
        """The oracle detector with perfect timing sorts every stream perfectly."""
        for target in MATERIAL_CLASSES:
            with self.subTest(target=target):
                config = load_run_config(overrides={
                    'sim.particle_count': 1500, 'sim.target': target.value, 'detector.kind': 'oracle'
                })
                report, simulation = run(config)
                self.assertEqual(report.particles_in, 1500)
                self.assertEqual(report.purity, 1.0)
                self.assertEqual(report.recovery, 1.0)
                self.assertEqual(report.breaches, 0)
                self.assertEqual(len(simulation.commanded_particles()),
                                 sum(report.bin_counts[o][target] for o in BinOutcome))

    def test_published_detector_purity(self):
        """Metals purity converges to the detector's precision under the feed priors."""
        config = load_run_config(overrides={'sim.particle_count': 50000, 'sim.seed': 11})
        expected = bayes_purity(config)
        self.assertAlmostEqual(expected, 0.928, delta=0.002)
        report, _ = run(config)
        self.assertAlmostEqual(report.purity, expected, delta=0.015)
        self.assertTrue(report.mass_conserved())
        self.assertGreater(report.throughput_kg_s, 0.0)
        self.assertLessEqual(report.throughput_kg_s, 5.5)

    def test_actuation_noise_band(self):
        """Timing jitter and stray deflections bring metals purity near the physical 89 %."""
        config = load_run_config(preset='actuation_noise', overrides={'sim.particle_count': 30000})
        report, _ = run(config)
        self.assertGreaterEqual(report.purity, 0.86)
        self.assertLessEqual(report.purity, 0.92)
        self.assertLess(report.recovery, 1.0)

    def test_same_seed_same_report(self):
        config = load_run_config(overrides={'sim.particle_count': 800, 'sim.seed': 7})
        first, first_sim = run(config)
        second, second_sim = run(config)
        self.assertEqual(first.to_dict(), second.to_dict())
        self.assertEqual(first.operations, second.operations)
        self.assertEqual(first_sim.records, second_sim.records)
        other, _ = run(load_run_config(overrides={'sim.particle_count': 800, 'sim.seed': 8}))
        self.assertNotEqual(first.to_dict(), other.to_dict())

    def test_mass_conservation(self):
        config = load_run_config(overrides={'sim.particle_count': 500})
        report, simulation = run(config)
        self.assertTrue(report.mass_conserved())
        self.assertAlmostEqual(report.mass_in_g, sum(p.mass_g for p in simulation.particles))
        self.assertTrue(all(p.outcome is not None for p in simulation.particles))

    def test_operations_counters_match_scheduler(self):
        """The counters summarised from the log agree with the PLC's own."""
        config = load_run_config(overrides={'sim.particle_count': 1000})
        report, simulation = run(config)
        counters = simulation.session.counters()
        self.assertEqual(report.flicks_executed, counters['flicks_executed'])
        self.assertEqual(report.breaches, counters['breaches'])
        self.assertEqual(report.operations.commands, report.commands_sent)

    def test_stationary_belt_is_refused(self):
        config = load_run_config(overrides={'sim.particle_count': 10})
        stopped = replace(config, calibration=BeltCalibration(belt_speed_mps=0.0))
        with self.assertRaises(ConfigError):
            Simulation(stopped)


if __name__ == '__main__':
    unittest.main()
