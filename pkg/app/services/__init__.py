from .policies import ObservationPolicy, PolicyFactory
from .filter_engine import FilterService
