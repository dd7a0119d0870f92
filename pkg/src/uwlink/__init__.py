"""Software-defined underwater acoustic link simulator.

Trains a bank of K waveforms end to end through a differentiable OFDM
transceiver and a replayed time-varying channel, so that decode errors
land on semantically close tokens.  Includes coded BPSK/QPSK baselines
and a linear analog video baseline for comparison.
"""

__version__ = "0.1.0"
