# Breather Lab: discrete breathers of Klein-Gordon lattices and their dNLS limit
