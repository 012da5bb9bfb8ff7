"""Sleep apnea screening from a single ECG lead.

Modules: ``signal_io`` (record containers), ``preprocess`` (segmentation and
quality gates), ``features`` (QRS, EDR, network images), ``nn`` (numpy
MobileNetV2 engine), ``classify``, ``ahi``, ``metrics``, ``plots`` and the
``cli`` pipeline.
"""
__version__ = "0.1.0"
