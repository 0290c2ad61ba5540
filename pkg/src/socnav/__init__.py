"""Social navigation: timed elastic bands with motion-prediction costs.

Modules:

* ``core``: geometry, obstacles and timed bands
* ``perception``: camera detections, LiDAR scans and agent tracks
* ``prediction``: interaction-aware and constant-velocity trajectory prediction
* ``teb``: classic timed elastic band optimisation and homotopy candidates
* ``mpteb``: social cost terms and the prediction-aware planner
* ``dwa``: dynamic window approach baseline
* ``sim``: differential-drive world with scripted pedestrians
* ``scenario``, ``bench``, ``plotting``, ``cli``: scenario files, batches and reports
"""

__version__ = "0.1.0"
