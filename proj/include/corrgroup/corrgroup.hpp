#ifndef CORRGROUP_CORRGROUP_HPP
#define CORRGROUP_CORRGROUP_HPP

#include "data_model.hpp"
#include "elastic_net.hpp"
#include "hcluster.hpp"
#include "pipeline.hpp"
#include "precluster.hpp"
#include "simbench.hpp"

#endif
