#ifndef NAKRING_ERRORS_HPP
#define NAKRING_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace nakring
{

// Broad failure classes. They map onto the CLI exit codes.
enum class ErrorClass { input, numerical, genericity };

class Error : public std::runtime_error
{
public:
    Error(ErrorClass cls, const std::string &what) : std::runtime_error(what), class_(cls) {}
    ErrorClass error_class() const noexcept
    {
        return class_;
    }

private:
    ErrorClass class_;
};

#define NAKRING_DEFINE_ERROR(Name, Class)                                                                    \
    class Name : public Error                                                                                \
    {                                                                                                        \
    public:                                                                                                  \
        explicit Name(const std::string &what) : Error(ErrorClass::Class, #Name ": " + what) {}             \
    };

NAKRING_DEFINE_ERROR(InvalidArgument, input)
NAKRING_DEFINE_ERROR(InvalidOmega, input)
NAKRING_DEFINE_ERROR(NonConvergent, numerical)
NAKRING_DEFINE_ERROR(NoConvergence, numerical)
NAKRING_DEFINE_ERROR(OnDivisor, numerical)
NAKRING_DEFINE_ERROR(IllConditioned, genericity)
NAKRING_DEFINE_ERROR(WrongCount, genericity)
NAKRING_DEFINE_ERROR(Degenerate, genericity)
NAKRING_DEFINE_ERROR(DivisorHit, genericity)
NAKRING_DEFINE_ERROR(BadFit, numerical)
NAKRING_DEFINE_ERROR(OrderCap, input)
NAKRING_DEFINE_ERROR(MissingDerivative, input)

#undef NAKRING_DEFINE_ERROR

} // namespace nakring

#endif
