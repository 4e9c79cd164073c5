"""Probabilistic air-to-ground channel and per-slot UAV energy accounting.

LoS probability follows the elevation-angle S-curve; mean path loss is the
LoS/NLoS-weighted free-space loss over the slant range; coverage radius is
the largest horizontal distance still meeting the received-power QoS
threshold. Energy uses the hover-and-transmit split: fly at constant speed,
hover (and relay) for the rest of the slot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

SPEED_OF_LIGHT = 299_792_458.0  # m/s

# default horizontal search ceiling for the coverage bisection, meters
COVERAGE_SEARCH_MAX = 10_000.0


class ChannelConfigError(ValueError):
    """Raised when parameters are inconsistent or coverage is impossible."""


class InfeasibleMoveError(ValueError):
    """Flight distance exceeds what the slot allows."""


@dataclass(frozen=True)
class ChannelParams:
    a: float                 # S-curve parameter (dimensionless)
    b: float                 # S-curve parameter (1/degree)
    eta_los: float           # excess LoS loss, dB
    eta_nlos: float          # excess NLoS loss, dB
    f_c: float               # carrier frequency, Hz
    p_tx: float              # transmit power, dBm
    gain: float              # antenna gain sum, dBi
    p_th: float              # QoS received-power threshold, dBm
    altitude: float          # flight altitude H, m
    c_light: float = SPEED_OF_LIGHT

    def validate(self) -> None:
        if self.a <= 0 or self.b <= 0:
            raise ChannelConfigError("S-curve parameters a, b must be > 0")
        if self.eta_los < 0 or self.eta_nlos < self.eta_los:
            raise ChannelConfigError("need eta_nlos >= eta_los >= 0")
        if self.f_c <= 0 or self.altitude <= 0:
            raise ChannelConfigError("f_c and altitude must be > 0")


def elevation_deg(params: ChannelParams, d: float) -> float:
    """Elevation angle in degrees for horizontal distance d (d=0 -> 90)."""
    if d < 0:
        raise ValueError("horizontal distance must be >= 0")
    if d == 0:
        return 90.0
    return math.degrees(math.atan(params.altitude / d))


def p_los(params: ChannelParams, d: float) -> float:
    theta = elevation_deg(params, d)
    return 1.0 / (1.0 + params.a * math.exp(-params.b * (theta - params.a)))


def free_space_loss(params: ChannelParams, slant: float) -> float:
    return 20.0 * math.log10(4.0 * math.pi * slant * params.f_c / params.c_light)


def mean_path_loss(params: ChannelParams, d: float) -> float:
    """LoS/NLoS-weighted path loss (dB) at horizontal distance d.

    Distance in the free-space term is the slant range sqrt(d^2 + H^2).
    """
    slant = math.hypot(d, params.altitude)
    fsl = free_space_loss(params, slant)
    p = p_los(params, d)
    return p * (fsl + params.eta_los) + (1.0 - p) * (fsl + params.eta_nlos)


def received_power(params: ChannelParams, d: float) -> float:
    """Received power in dBm at horizontal distance d."""
    return params.p_tx + params.gain - mean_path_loss(params, d)


@dataclass(frozen=True)
class CoverageResult:
    radius: float      # m
    unbounded: bool    # threshold never binds inside the search window


def coverage_radius(params: ChannelParams, search_max: float = COVERAGE_SEARCH_MAX,
                    tol_m: float = 1e-4, grid_points: int = 1000) -> CoverageResult:
    """Largest d with P_rx(d) >= P_th, by bisection on the monotone P_rx curve.

    The monotonicity assumption is verified on a d-grid first; a violation
    aborts (it would make 'largest d' ill-defined).
    """
    params.validate()
    p0 = received_power(params, 0.0)
    if p0 < params.p_th:
        raise ChannelConfigError("UAV cannot cover even nadir: P_rx(0) < P_th")
    grid = [search_max * i / (grid_points - 1) for i in range(grid_points)]
    prev = received_power(params, grid[0])
    for d in grid[1:]:
        cur = received_power(params, d)
        if cur > prev + 1e-9:
            raise ChannelConfigError("P_rx not monotone non-increasing in d; aborting")
        prev = cur
    if received_power(params, search_max) >= params.p_th:
        return CoverageResult(radius=search_max, unbounded=True)
    lo, hi = 0.0, search_max   # P_rx(lo) >= P_th > P_rx(hi)
    while hi - lo > tol_m:
        mid = 0.5 * (lo + hi)
        if received_power(params, mid) >= params.p_th:
            lo = mid
        else:
            hi = mid
    return CoverageResult(radius=0.5 * (lo + hi), unbounded=False)


@dataclass(frozen=True)
class EnergyParams:
    hover_power: float    # eps1, W
    comm_power: float     # eps2, W
    fly_power: float      # eps3, W
    speed: float          # v_u, m/s
    slot_seconds: float   # tau, s
    battery: float        # E_battery, J

    def validate(self) -> None:
        for name in ("hover_power", "comm_power", "fly_power", "speed",
                     "slot_seconds", "battery"):
            if getattr(self, name) <= 0:
                raise ChannelConfigError(f"energy parameter {name} must be > 0")

    @property
    def max_flight(self) -> float:
        """Farthest flyable distance in one slot, v_u * tau."""
        return self.speed * self.slot_seconds

    @property
    def slot_energy_max(self) -> float:
        """E0, the tight per-slot maximum of the affine energy model."""
        return self.slot_seconds * max(self.hover_power + self.comm_power, self.fly_power)


def slot_energy(params: EnergyParams, flight_distance: float) -> float:
    """Slot energy (J): hover+comm for the stationary part, propulsion while flying."""
    if flight_distance < 0:
        raise InfeasibleMoveError("flight distance must be >= 0")
    if flight_distance > params.max_flight * (1 + 1e-12):
        raise InfeasibleMoveError(
            f"flight {flight_distance:.3f} m exceeds v_u*tau = {params.max_flight:.3f} m"
        )
    fly_time = flight_distance / params.speed
    return ((params.hover_power + params.comm_power) * (params.slot_seconds - fly_time)
            + params.fly_power * fly_time)
