# Schedulers package 