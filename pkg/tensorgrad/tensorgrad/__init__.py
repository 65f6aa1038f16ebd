name = "tensorgrad"
