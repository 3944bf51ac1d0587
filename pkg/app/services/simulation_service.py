"""
Simulation service module.

This module runs a discrete-event simulation of the sortation line on a
millisecond clock: the feeder deposits a monolayer of fragments, the camera
fires each time the belt has advanced one field of view, every frame goes
through the detector and the inference pipeline, paddle commands travel to
the PLC over the wire protocol, the scheduler actuates the paddles and each
fragment is finally struck into the positive bin or falls into the negative
one.

Positions along the belt are measured from the feeder drop line. The field
of view covers [fov_start, fov_start + fov_length) and the belt ends
``fov_to_edge_mm`` after it.
"""

import bisect
import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass

import numpy as np
import simpy
from scipy.stats import norm

from app.api.error_handling import ConfigError, ControlError
from app.api.plc_server import PlcSession
from app.api.plc_wire import FramePacket, encode
from app.models.geometry import BBox
from app.models.material import MATERIAL_CLASSES, BinOutcome, ParticleState
from app.models.particle import Particle, Sighting
from app.models.report import SimReport
from app.services.control_service import Scheduler, command_for_detection, paddle_for_x, round_ms
from app.services.detector_service import build_detector, infer_frame
from app.services.geometry_service import clamp_to_frame
from app.services.report_service import summarize_operations

# Configure logging
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrameEvent:
    """One camera trigger."""
    frame_id: int
    capture_ts: float


def frame_period_ms(cal):
    """Time for the belt to advance one field of view; None on a stationary belt."""
    if cal.belt_speed_mps <= 0:
        return None
    return cal.fov_length_mm / cal.belt_speed_mps


def trigger_frames(cal, until_ms=None):
    """
    Camera triggers driven by belt displacement.

    Frame k fires at k times the frame period, so consecutive frames tile the
    belt. A stationary belt produces only the first frame.

    Args:
        cal (BeltCalibration): Belt calibration
        until_ms (float, optional): Last instant to trigger at; unbounded if None

    Yields:
        FrameEvent: Frames in time order
    """
    period = frame_period_ms(cal)
    if period is None:
        yield FrameEvent(0, 0.0)
        return
    k = 0
    while until_ms is None or k * period <= until_ms:
        yield FrameEvent(k, k * period)
        k += 1


def frame_index_for(t_enter_ms, period_ms):
    """Index of the frame that sees a fragment whose centroid enters the view at ``t_enter_ms``."""
    return max(0, math.ceil(t_enter_ms / period_ms))


def _straddles_seam(x, w, seams):
    return any(x - w / 2 < seam < x + w / 2 for seam in seams)


def _clear_of(x, w, h, t, recent, speed, gap):
    """Whether a footprint dropped at (x, 0) keeps ``gap`` from every recent fragment."""
    for other in recent:
        if abs(x - other.x_mm) >= (w + other.w_mm) / 2 + gap:
            continue
        if abs(other.position_at(t)) < (h + other.h_mm) / 2 + gap:
            return False
    return True


def spawn(feeder, cal, rng, count=None, until_ms=None):
    """
    Fragments delivered by the vibratory feeder.

    Arrivals are Poisson at the configured mass rate. Positions across the
    belt are uniform, rejection-sampled so that footprints keep
    ``min_gap_mm`` from each other and never cross a camera seam; when no
    position is free the drop is delayed until the belt has moved on.

    Args:
        feeder (FeederConfig): Feeder parameters
        cal (BeltCalibration): Belt calibration
        rng (numpy.random.Generator): Feeder random stream
        count (int, optional): Number of fragments to deliver
        until_ms (float, optional): Stop delivering after this instant

    Yields:
        Particle: Fragments in spawn order
    """
    if count is None and until_ms is None:
        raise ConfigError('sim.particle_count', "set particle_count or duration_ms")
    rate = feeder.particle_rate_per_s
    if rate <= 0 or count == 0:
        return
    speed = cal.belt_speed_mps
    if speed <= 0:
        raise ConfigError('calibration.belt_speed_mps', "the feeder needs a moving belt")

    width = cal.belt_width_mm
    seams = [i * cal.segment_width_px / cal.px_per_mm for i in range(1, cal.segment_count)]
    mix = np.array([feeder.class_mix[cls] for cls in MATERIAL_CLASSES], dtype=float)
    mix = mix / mix.sum()
    gap = feeder.min_gap_mm
    horizon_mm = feeder.max_extent_mm + gap
    retry_ms = max(gap, 1.0) / speed

    recent = deque()
    t = 0.0
    n = 0
    while count is None or n < count:
        t += rng.exponential(1000.0 / rate)
        cls = MATERIAL_CLASSES[int(rng.choice(len(MATERIAL_CLASSES), p=mix))]
        low, high = feeder.size_mm[cls]
        w, h = (float(v) for v in rng.uniform(low, high, size=2))

        x = None
        while x is None:
            if until_ms is not None and t > until_ms:
                return
            while recent and recent[0].position_at(t) > horizon_mm:
                recent.popleft()
            for _ in range(feeder.max_attempts):
                candidate = float(rng.uniform(w / 2, width - w / 2))
                if _straddles_seam(candidate, w, seams):
                    continue
                if _clear_of(candidate, w, h, t, recent, speed, gap):
                    x = candidate
                    break
            else:
                t += retry_ms

        particle = Particle(n, cls, w, h, feeder.mass_g[cls], t, x, speed)
        recent.append(particle)
        n += 1
        yield particle


def crossing_time(particle, cal, layout, fov_start_mm):
    """Instant the fragment's centroid passes the paddle line."""
    edge_mm = fov_start_mm + cal.fov_length_mm + cal.fov_to_edge_mm
    return particle.spawn_ts + edge_mm / particle.speed_mps + layout.effective_t_to_hit_ms


def half_window_ms(particle):
    """Half the time the fragment's footprint needs to pass a point."""
    return particle.h_mm / (2.0 * particle.speed_mps)


def strike(particle, events, cal, layout, fov_start_mm, delta_ms=0.0):
    """
    Bin outcome of one fragment.

    The fragment is struck iff the paddle under its centroid is actuated at
    some point while the fragment passes the paddle line. ``delta_ms`` shifts
    the crossing instant to model trajectory noise.

    Args:
        particle (Particle): The fragment
        events (list): ActuationEvents (any paddles, sorted by start)

    Returns:
        BinOutcome: POSITIVE if struck
    """
    paddle = paddle_for_x(particle.x_mm * cal.px_per_mm, cal, layout)
    t = crossing_time(particle, cal, layout, fov_start_mm) + delta_ms
    half = half_window_ms(particle)
    lo, hi = t - half, t + half
    for event in events:
        if event.paddle == paddle and event.start <= hi and event.end >= lo:
            return BinOutcome.POSITIVE
    return BinOutcome.NEGATIVE


def hit_probability(half_window, ton_ms, timing_std_ms, offset_ms=0.0):
    """
    Closed-form chance that a correctly timed actuation meets a fragment
    whose crossing instant is perturbed by N(0, std).

    The actuation [f, f + ton] with f = crossing + offset overlaps the
    footprint window iff the perturbation lies in
    [offset - half_window, offset + ton + half_window].
    """
    lo = offset_ms - half_window
    hi = offset_ms + ton_ms + half_window
    if timing_std_ms <= 0:
        return 1.0 if lo <= 0.0 <= hi else 0.0
    return float(norm.cdf(hi / timing_std_ms) - norm.cdf(lo / timing_std_ms))


class _EventIndex:
    """Actuation events per paddle, for window lookups."""

    def __init__(self, events):
        self.by_paddle = defaultdict(list)
        for event in sorted(events, key=lambda e: e.start):
            self.by_paddle[event.paddle].append(event)
        self.starts = {p: [e.start for e in evs] for p, evs in self.by_paddle.items()}

    def overlapping(self, paddle, lo, hi):
        events = self.by_paddle.get(paddle, [])
        end = bisect.bisect_right(self.starts.get(paddle, []), hi)
        return [e for e in events[:end] if e.end >= lo]


class Simulation:
    """
    One simulation run.

    Three independent random streams are derived from the seed: feeder,
    detector and strikes, so changing one stage never reshuffles another.

    Args:
        config (RunConfig): Validated run configuration
        detector (optional): Detector instance overriding the configured one
    """

    def __init__(self, config, detector=None):
        self.config = config.validate()
        cal = config.calibration
        if cal.belt_speed_mps <= 0:
            raise ConfigError('calibration.belt_speed_mps', "a stationary belt delivers nothing")

        feeder_seed, detector_seed, strike_seed = np.random.SeedSequence(config.sim.seed).spawn(3)
        self.feeder_rng = np.random.default_rng(feeder_seed)
        self.strike_rng = np.random.default_rng(strike_seed)
        self.detector = detector or build_detector(
            config.sim.detector, config.confusion, np.random.default_rng(detector_seed)
        )

        self.env = simpy.Environment()
        self.wire = simpy.Store(self.env)
        self.records = []
        self.session = PlcSession(
            Scheduler(config.layout), sink=self.records.append, classify=self._fragment_class
        )
        self.period = frame_period_ms(cal)

        self.particles = []
        self.frames = defaultdict(list)
        self.sightings = {}
        self.events = []
        self.acks = []
        self.fragments = {}
        self.frames_processed = 0
        self.commands_sent = 0
        self.feed_end_ms = 0.0
        self._feeding = True
        self._running = True

    def _fragment_class(self, fragment_id):
        entry = self.fragments.get(fragment_id)
        return entry[1].value if entry else None

    # ---- processes ----

    def _feeder(self):
        sim = self.config.sim
        for particle in spawn(sim.feeder, self.config.calibration, self.feeder_rng,
                              sim.particle_count, sim.duration_ms):
            yield self.env.timeout(particle.spawn_ts - self.env.now)
            t_enter = particle.spawn_ts + sim.fov_start_mm / particle.speed_mps
            particle.frame_id = frame_index_for(t_enter, self.period)
            self.frames[particle.frame_id].append(particle)
            self.particles.append(particle)
        self.feed_end_ms = sim.duration_ms if sim.duration_ms is not None else self.env.now
        self._feeding = False

    def _sighting(self, particle, capture_ts):
        cal = self.config.calibration
        ppm = cal.px_per_mm
        s = particle.position_at(capture_ts)
        y = (self.config.sim.fov_start_mm + cal.fov_length_mm - s) * ppm
        y = min(max(y, 0.0), float(cal.segment_height_px))
        box = clamp_to_frame(BBox.in_global(
            particle.true_class, particle.x_mm * ppm, y, particle.w_mm * ppm, particle.h_mm * ppm, cal
        ))
        return Sighting(particle.id, particle.true_class, box)

    def _camera(self):
        for frame in trigger_frames(self.config.calibration):
            yield self.env.timeout(frame.capture_ts - self.env.now)
            if not self._feeding and (not self.frames or frame.frame_id > max(self.frames)):
                break
            sightings = [self._sighting(p, frame.capture_ts) for p in self.frames.get(frame.frame_id, [])]
            self.sightings[frame.frame_id] = [s.particle_id for s in sightings]
            self.frames_processed += 1
            self.env.process(self._infer(frame, sightings))

        cal, layout, sim = self.config.calibration, self.config.layout, self.config.sim
        drain_ms = (
            sim.inference_latency_ms + sim.wire_transit_ms
            + (cal.fov_to_edge_mm + cal.fov_length_mm) / cal.belt_speed_mps
            + layout.effective_t_to_hit_ms + max(sim.t_offset_ms, 0.0)
            + max(sim.ton_ms, layout.actuate_ms) + layout.return_ms + 2 * sim.tick_ms
        )
        yield self.env.timeout(drain_ms)
        self._running = False

    def _infer(self, frame, sightings):
        config = self.config
        sim = config.sim
        yield self.env.timeout(sim.inference_latency_ms)
        detections = infer_frame(
            sightings, self.detector, config.calibration, frame.frame_id, sim.conf_thresh, sim.nms_iou
        )
        commands = []
        for det in detections:
            if det.class_id is not sim.target:
                continue
            fragment_id = len(self.fragments)
            try:
                cmd = command_for_detection(
                    det, frame.capture_ts, config.calibration, config.layout, fragment_id,
                    sim.ton_ms, sim.t_offset_ms
                )
            except ControlError as e:
                logger.warning(f"Frame {frame.frame_id}: no command for detection: {e}")
                continue
            self.fragments[fragment_id] = (det.particle_id, det.class_id)
            commands.append(cmd)

        packet = FramePacket(frame.frame_id, round_ms(frame.capture_ts), tuple(commands))
        line = encode(packet, config.layout.paddle_count)
        self.commands_sent += len(commands)
        yield self.env.timeout(sim.wire_transit_ms)
        yield self.wire.put(line)

    def _plc(self):
        while True:
            line = yield self.wire.get()
            self.acks.append(self.session.handle_line(line, self.env.now))

    def _ticker(self):
        while self._running:
            self.events.extend(self.session.tick(self.env.now))
            yield self.env.timeout(self.config.sim.tick_ms)

    # ---- run ----

    def run(self):
        """
        Execute the run and bin every fragment.

        Returns:
            SimReport: The report of the run
        """
        config = self.config
        logger.info(
            f"Simulating preset {config.preset}, seed {config.sim.seed}, "
            f"detector {config.sim.detector}, target {config.sim.target.value}"
        )
        self.env.process(self._feeder())
        camera = self.env.process(self._camera())
        self.env.process(self._plc())
        self.env.process(self._ticker())
        self.env.run(until=camera)

        self.events.extend(self.session.tick(self.env.now))
        self.session.close()
        self._bin_particles()
        report = self._report()
        logger.info(
            f"Run finished: {report.particles_in} fragments, purity {report.purity:.4f}, "
            f"recovery {report.recovery:.4f}, {report.flicks_executed} flicks, "
            f"{report.breaches} breaches"
        )
        return report

    def _bin_particles(self):
        cal, layout = self.config.calibration, self.config.layout
        noise = self.config.sim.noise
        fov_start = self.config.sim.fov_start_mm
        index = _EventIndex(self.events)
        for particle in self.particles:
            delta = float(self.strike_rng.normal(0.0, noise.timing_std_ms))
            stray = float(self.strike_rng.random()) < noise.stray_prob
            paddle = paddle_for_x(particle.x_mm * cal.px_per_mm, cal, layout)
            t = crossing_time(particle, cal, layout, fov_start) + delta
            half = half_window_ms(particle)
            struck = strike(particle, index.overlapping(paddle, t - half, t + half), cal, layout,
                            fov_start, delta)
            if struck is BinOutcome.NEGATIVE and stray:
                struck = BinOutcome.POSITIVE
            particle.state = ParticleState.BINNED
            particle.outcome = struck

    def _report(self):
        config = self.config
        report = SimReport(
            seed=config.sim.seed,
            preset=config.preset,
            target=config.sim.target,
            detector=getattr(self.detector, 'name', type(self.detector).__name__),
            duration_ms=self.feed_end_ms,
            frames_processed=self.frames_processed,
            commands_sent=self.commands_sent,
            operations=summarize_operations(self.records),
            config_snapshot=config.snapshot
        )
        for particle in self.particles:
            report.particles_in += 1
            report.mass_in_g += particle.mass_g
            report.bin_counts[particle.outcome][particle.true_class] += 1
            report.bin_mass_g[particle.outcome][particle.true_class] += particle.mass_g
        return report

    def commanded_particles(self):
        """Ids of fragments that had at least one command issued."""
        return {pid for pid, _ in self.fragments.values() if pid is not None}


def run(config, detector=None):
    """
    Run one simulation.

    Args:
        config (RunConfig): Validated run configuration
        detector (optional): Detector instance overriding the configured one

    Returns:
        tuple: (SimReport, Simulation) - the report and the finished run
    """
    simulation = Simulation(config, detector)
    report = simulation.run()
    return report, simulation
