"""Flow-level network performance prediction toolkit.

Combines a packet-level discrete-event simulator (for generating labeled
delay / jitter / loss datasets) with a message-passing graph neural network
whose recurrent update cells are pluggable (plain RNN, GRU, or LSTM).
"""

__version__ = "0.1.0"
