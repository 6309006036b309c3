"""
Error types raised by the crossing simulator
"""


class SimulationError(Exception):
    """Base class for simulator failures"""


class ScenarioError(SimulationError, ValueError):
    """Invalid trial geometry or vehicle kinematics"""


class PerceptionError(SimulationError, ValueError):
    """Invalid observation or belief state"""


class LocomotionError(SimulationError, ValueError):
    """Impossible gait command or geometry"""


class EnvError(SimulationError):
    """Misuse of the crossing environment (unknown variant, stepping a finished episode)"""
