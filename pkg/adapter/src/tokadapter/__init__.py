"""Bridge between a video tokenizer and the acoustic link simulator.

Exports the tokenizer's codebook and token streams in the simulator's
file formats, decodes received streams back to frames, and scores the
reconstructions.  The two packages share nothing but files: this one
never imports the simulator.
"""

__version__ = "0.1.0"
