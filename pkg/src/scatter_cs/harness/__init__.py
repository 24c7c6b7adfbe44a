"""Configuration, Monte Carlo drivers, theory bounds and the command-line interface."""
from .config import ExperimentConfig, load_config, parse_density
from .experiments import (DRIVERS, ExperimentResult, mc_coherence, mc_dt, mc_recovery, mc_stability,
                          reciprocity_check, resonance_check, write_csv)
from .theory import TheoryReport, theory_bounds
