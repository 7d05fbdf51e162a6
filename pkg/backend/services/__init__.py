"""
Backend Services Module

Layered bottom-up:
- metric_core: finite metric spaces, balls, doubling measures
- random_lattice: maximal grids, parent maps, sampled and enumerated lattices
- lattice_combinatorics: the 1-lattice census and recoloring injection
- goodness: good/bad cubes, boundary layers, really-good adjustment
- haar_weights: Haar systems, A2/A-infinity characteristics, weight families
- bellman: the Bellman function and its Carleson sequence
- shifts_paraproducts: dyadic shifts, stopping families, paraproducts
- decomposition: model operators and the bilinear-form pipeline
- experiments / report_service: config-driven runs and report files
"""
