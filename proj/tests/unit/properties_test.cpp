#include <gtest/gtest.h>

#include <string>

#include "properties.hpp"

namespace {

class PropertyTest : public ::testing::TestWithParam<props::Property> {};

TEST_P(PropertyTest, HoldsOnRandomCases) {
    const props::Property& p = GetParam();
    const props::Result r = p.run(20260101, 100);
    EXPECT_EQ(r.cases, 100u);
    EXPECT_EQ(r.failures, 0u) << p.module << " / " << p.name << ": " << r.first_failure;
}

std::string property_name(const ::testing::TestParamInfo<props::Property>& info) {
    std::string out = std::string(info.param.module) + "_" + info.param.name;
    for (char& c : out)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    return out;
}

INSTANTIATE_TEST_SUITE_P(AllModules, PropertyTest, ::testing::ValuesIn(props::all()), property_name);

}  // namespace
