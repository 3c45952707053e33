"""Simulated autonomous tissue-dissection pipeline.

Stages: arm kinematic calibration (chain, calibration), stereo reconstruction
(stereo), tissue and instrument perception (perception), boundary trajectory
planning (planner) and closed-loop visual servoing (servo). ``cli`` wires them.
"""

__version__ = "0.1.0"
