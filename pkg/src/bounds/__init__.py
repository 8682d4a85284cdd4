from .heterodyne import HeterodyneSide, OverlapBound, OverlapMethod
from .dps import DiffMethod, DpsParams
